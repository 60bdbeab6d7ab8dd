//! Image quality metrics and the padding used to align frames to the
//! pyramid's divisibility requirement.

use crate::error::{Error, Result};
use crate::frame::Frame;
use ndarray::{Array2, Array3};

/// PSNR against peak value 1.0; identical inputs are flagged rather than
/// reported as a number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Zero MSE: the images are identical.
    Identical,
}

impl Psnr {
    /// Numeric view; identical maps to +inf.
    pub fn db(&self) -> f64 {
        match self {
            Psnr::Db(v) => *v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4}"),
            Psnr::Identical => write!(f, "identical"),
        }
    }
}

/// `10 * log10(1 / MSE)` over all channels.
pub fn psnr(a: &Frame, b: &Frame) -> Result<Psnr> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "psnr: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        let d = x - y;
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        Ok(Psnr::Identical)
    } else {
        Ok(Psnr::Db(10.0 * (1.0 / mse).log10()))
    }
}

/// SSIM window size and Gaussian width.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4; // (K1 * L)^2, K1 = 0.01, L = 1
const SSIM_C2: f64 = 9e-4; // (K2 * L)^2, K2 = 0.03

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable Gaussian filter: `(H, W)` -> `(H-10, W-10)`.
fn gauss_filter_valid(img: &Array2<f64>, k: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = img.dim();
    let oh = h - (SSIM_WINDOW - 1);
    let ow = w - (SSIM_WINDOW - 1);
    // Rows first.
    let mut rows = Array2::<f64>::zeros((h, ow));
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * img[(y, x + i)];
            }
            rows[(y, x)] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i, x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Mean local SSIM over the luminance channel, 11x11 Gaussian windows
/// (sigma 1.5), valid positions only.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("ssim: shape mismatch".into()));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let la = a.luminance();
    let lb = b.luminance();
    let k = gaussian_kernel();
    let mu_a = gauss_filter_valid(&la, &k);
    let mu_b = gauss_filter_valid(&lb, &k);
    let aa = gauss_filter_valid(&(&la * &la), &k);
    let bb = gauss_filter_valid(&(&lb * &lb), &k);
    let ab = gauss_filter_valid(&(&la * &lb), &k);

    let mut acc = 0.0;
    let (oh, ow) = mu_a.dim();
    for y in 0..oh {
        for x in 0..ow {
            let ma = mu_a[(y, x)];
            let mb = mu_b[(y, x)];
            let va = aa[(y, x)] - ma * ma;
            let vb = bb[(y, x)] - mb * mb;
            let cov = ab[(y, x)] - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            acc += num / den;
        }
    }
    Ok(acc / (oh * ow) as f64)
}

/// Original dimensions remembered by `mirror_pad`, inverted by `unpad`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRecord {
    pub height: usize,
    pub width: usize,
}

impl CropRecord {
    /// True when padding added nothing.
    pub fn is_empty_for(&self, padded: &Frame) -> bool {
        padded.height() == self.height && padded.width() == self.width
    }
}

/// Reflects the frame rightward/downward so both dims become multiples of
/// `2^(levels-1)`. Edge-inclusive mirror: new column `w + i` copies source
/// column `w - 1 - i`.
pub fn mirror_pad(x: &Frame, levels: usize) -> Result<(Frame, CropRecord)> {
    if levels < 1 {
        return Err(Error::Config("mirror_pad needs levels >= 1".into()));
    }
    let align = 1usize << (levels - 1);
    let (h, w) = (x.height(), x.width());
    let nh = h.div_ceil(align) * align;
    let nw = w.div_ceil(align) * align;
    let (ph, pw) = (nh - h, nw - w);
    // Reflection can at most double a dimension.
    if (ph > 0 && ph >= h) || (pw > 0 && pw >= w) {
        return Err(Error::UnsupportedSize(format!(
            "cannot mirror-pad {h}x{w} to {nh}x{nw}: pad of {ph}/{pw} >= source extent"
        )));
    }
    let mut out = Array3::<f64>::zeros((3, nh, nw));
    let src = x.data();
    for c in 0..3 {
        for y in 0..nh {
            let sy = if y < h { y } else { 2 * h - 1 - y };
            for xx in 0..nw {
                let sx = if xx < w { xx } else { 2 * w - 1 - xx };
                out[(c, y, xx)] = src[(c, sy, sx)];
            }
        }
    }
    Ok((
        Frame::new(out)?,
        CropRecord {
            height: h,
            width: w,
        },
    ))
}

/// Crops a padded frame back to its recorded size, the exact inverse of
/// `mirror_pad` on the same record.
pub fn unpad(x: &Frame, rec: &CropRecord) -> Result<Frame> {
    if rec.height > x.height() || rec.width > x.width() {
        return Err(Error::Shape(format!(
            "unpad: record {}x{} exceeds frame {}x{}",
            rec.height,
            rec.width,
            x.height(),
            x.width()
        )));
    }
    let cropped = x
        .data()
        .slice(ndarray::s![.., ..rec.height, ..rec.width])
        .to_owned();
    Frame::new(cropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_frame(rng: &mut ChaCha20Rng, h: usize, w: usize) -> Frame {
        Frame::new(Array3::from_shape_fn((3, h, w), |_| rng.gen_range(0.0..=1.0))).unwrap()
    }

    /// Direct windowed SSIM, written independently of the separable route.
    fn ssim_brute(a: &Frame, b: &Frame) -> f64 {
        let la = a.luminance();
        let lb = b.luminance();
        let k = gaussian_kernel();
        let (h, w) = la.dim();
        let mut vals = Vec::new();
        for wy in 0..=(h - SSIM_WINDOW) {
            for wx in 0..=(w - SSIM_WINDOW) {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let weight = k[dy] * k[dx];
                        ma += weight * la[(wy + dy, wx + dx)];
                        mb += weight * lb[(wy + dy, wx + dx)];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let weight = k[dy] * k[dx];
                        let da = la[(wy + dy, wx + dx)] - ma;
                        let db = lb[(wy + dy, wx + dx)] - mb;
                        va += weight * da * da;
                        vb += weight * db * db;
                        cov += weight * da * db;
                    }
                }
                let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
                vals.push(num / den);
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    fn psnr_brute(a: &Frame, b: &Frame) -> f64 {
        let n = a.data().len() as f64;
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        10.0 * (1.0 / mse).log10()
    }

    #[test]
    fn psnr_oracles() {
        let a = Frame::constant(4, 4, 0.2);
        let b = Frame::constant(4, 4, 0.3);
        match psnr(&a, &b).unwrap() {
            Psnr::Db(v) => assert!((v - 20.0).abs() < 1e-9),
            _ => panic!("expected finite"),
        }
        assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
        // MSE = 1 -> 0 dB.
        let z = Frame::constant(4, 4, 0.0);
        let o = Frame::constant(4, 4, 1.0);
        match psnr(&z, &o).unwrap() {
            Psnr::Db(v) => assert!(v.abs() < 1e-12),
            _ => panic!("expected finite"),
        }
    }

    #[test]
    fn ssim_identity_and_constants() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let a = random_frame(&mut rng, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let z = Frame::constant(16, 16, 0.0);
        let o = Frame::constant(16, 16, 1.0);
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&z, &o).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_symmetry_and_range() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..5 {
            let a = random_frame(&mut rng, 16, 16);
            let b = random_frame(&mut rng, 16, 16);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn metrics_match_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..100 {
            let a = random_frame(&mut rng, 16, 16);
            let b = random_frame(&mut rng, 16, 16);
            let p = match psnr(&a, &b).unwrap() {
                Psnr::Db(v) => v,
                _ => unreachable!(),
            };
            assert!((p - psnr_brute(&a, &b)).abs() < 1e-9);
            assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = Frame::constant(8, 8, 0.5);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn mirror_pad_alignment_and_inverse() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        for (h, w, s) in [(100, 100, 4), (33, 17, 3), (128, 128, 4), (10, 22, 5)] {
            let x = random_frame(&mut rng, h, w);
            let (padded, rec) = mirror_pad(&x, s).unwrap();
            let align = 1usize << (s - 1);
            assert_eq!(padded.height() % align, 0);
            assert_eq!(padded.width() % align, 0);
            let back = unpad(&padded, &rec).unwrap();
            assert_eq!(back.data(), x.data());
        }
    }

    #[test]
    fn mirror_pad_of_aligned_frame_is_identity() {
        let x = Frame::constant(128, 128, 0.4);
        let (padded, rec) = mirror_pad(&x, 4).unwrap();
        assert!(rec.is_empty_for(&padded));
        assert_eq!(padded.data(), x.data());
    }

    #[test]
    fn mirror_pad_reflection_symmetry() {
        // Label columns by value: column j holds j / w.
        let w = 10;
        let x = Frame::new(Array3::from_shape_fn((3, 8, w), |(_, _, xx)| {
            xx as f64 / w as f64
        }))
        .unwrap();
        let (padded, _) = mirror_pad(&x, 4).unwrap(); // w: 10 -> 16
        for i in 0..(16 - w) {
            let col = padded.data()[(0, 0, w + i)];
            let mirrored = padded.data()[(0, 0, w - 1 - i)];
            assert_eq!(col, mirrored, "pad col {i}");
        }
        // Rows likewise: 8 -> 8, unchanged for S=4.
        assert_eq!(padded.height(), 8);
    }

    #[test]
    fn mirror_pad_rejects_oversized_padding() {
        // 3 wide, S=4 needs multiple of 8 -> pad 5 >= 3.
        let x = Frame::constant(8, 3, 0.5);
        assert!(matches!(
            mirror_pad(&x, 4),
            Err(Error::UnsupportedSize(_))
        ));
    }

    #[test]
    fn psnr_100_db_sanity() {
        let a = Frame::constant(4, 4, 0.5);
        let mut b = a.clone();
        b.data_mut()[(0, 0, 0)] += 1e-5;
        match psnr(&a, &b).unwrap() {
            Psnr::Db(v) => assert!(v > 90.0),
            _ => panic!(),
        }
    }
}
