//! Frames and time ratios, the basic currency of synthesis.
//!
//! A [`Frame`] is a 3-channel image stored channel-first as `(3, H, W)` with
//! values in `[0, 1]`. A [`TimeRatio`] places a target frame relative to an
//! input pair: values in `(0, 1)` are interpolation, values outside are
//! extrapolation.

use crate::error::{Error, Result};
use ndarray::{Array3, ArrayD};
use std::path::Path;

/// RGB image with values in `[0, 1]`, stored as `(3, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    data: Array3<f64>,
}

impl Frame {
    /// Wraps raw channel-first data. Fails if the channel count is not 3 or
    /// any value is non-finite.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::Shape(format!(
                "frame must have 3 channels, got {}",
                data.shape()[0]
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("frame contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    /// Wraps data, clamping every value into `[0, 1]`.
    pub fn new_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(data)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((3, height, width)),
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            data: Array3::from_elem((3, height, width), value),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.data.shape() == other.data.shape()
    }

    /// Per-pixel luminance (ITU BT.601 weights), shape `(H, W)`.
    pub fn luminance(&self) -> ndarray::Array2<f64> {
        let r = self.data.index_axis(ndarray::Axis(0), 0);
        let g = self.data.index_axis(ndarray::Axis(0), 1);
        let b = self.data.index_axis(ndarray::Axis(0), 2);
        &r * 0.299 + &g * 0.587 + &b * 0.114
    }

    /// Mean over channels per pixel, shape `(H, W)`.
    pub fn channel_mean(&self) -> ndarray::Array2<f64> {
        let r = self.data.index_axis(ndarray::Axis(0), 0);
        let g = self.data.index_axis(ndarray::Axis(0), 1);
        let b = self.data.index_axis(ndarray::Axis(0), 2);
        (&r + &g + &b) / 3.0
    }

    /// Converts to a batched `(1, 3, H, W)` tensor of the requested scalar type.
    pub fn to_tensor<T: crate::tape::Scalar>(&self) -> ArrayD<T> {
        let (h, w) = (self.height(), self.width());
        ArrayD::from_shape_vec(
            ndarray::IxDyn(&[1, 3, h, w]),
            self.data.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("shape matches data length")
    }

    /// Builds a frame from a `(1, 3, H, W)` or `(3, H, W)` tensor, clamping to `[0, 1]`.
    pub fn from_tensor<T: crate::tape::Scalar>(t: &ArrayD<T>) -> Result<Self> {
        let shape = t.shape();
        let (c, h, w) = match shape {
            [1, c, h, w] => (*c, *h, *w),
            [c, h, w] => (*c, *h, *w),
            _ => {
                return Err(Error::Shape(format!(
                    "expected (1,3,H,W) or (3,H,W), got {shape:?}"
                )))
            }
        };
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 channels, got {c}")));
        }
        let data = Array3::from_shape_vec(
            (3, h, w),
            t.iter().map(|v| crate::tape::Scalar::to_f64(*v)).collect(),
        )
        .expect("shape matches data length");
        Self::new_clamped(data)
    }

    /// Loads an 8-bit RGB PNG.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = Array3::zeros((3, h, w));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c, y as usize, x as usize)] = px.0[c] as f64 / 255.0;
            }
        }
        Ok(Self { data })
    }

    /// Writes an 8-bit RGB PNG (values rounded to the nearest of 256 levels).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    quantize(self.data[(0, y, x)]),
                    quantize(self.data[(1, y, x)]),
                    quantize(self.data[(2, y, x)]),
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Relative temporal position of a target frame with respect to an input pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeRatio(f64);

impl TimeRatio {
    pub fn new(r: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::InvalidRatio(format!("{r}")));
        }
        Ok(Self(r))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_interpolation(self) -> bool {
        self.0 > 0.0 && self.0 < 1.0
    }

    pub fn is_extrapolation(self) -> bool {
        !self.is_interpolation()
    }
}
