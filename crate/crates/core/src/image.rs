//! Pixel-space image values.
//!
//! Images are `C×H×W` arrays of `f64` in `[-1, 1]`. The mapping to 8-bit PNG
//! is fixed: `v ↦ round((v + 1) / 2 · 255)` on save and `b ↦ b / 255 · 2 − 1`
//! on load. Normal maps share that encoding, which is `n ↦ (n + 1) / 2` per
//! component.

use std::path::Path;

use ndarray::{s, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;

/// A single `C×H×W` image.
pub type Image = Array3<f64>;

/// Per-item metadata carried alongside a batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemLabel {
    pub direction: Option<String>,
    pub prompt: Option<String>,
}

/// `B×C×H×W` values with optional per-item labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    pub data: Array4<f64>,
    pub labels: Vec<ItemLabel>,
}

impl ImageBatch {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let (b, _c, h, w) = data.dim();
        if h != w {
            return Err(Error::InvalidArgument(format!(
                "image batch must be square, got {h}x{w}"
            )));
        }
        ensure_finite(data.iter().copied(), "image batch")?;
        Ok(Self {
            data,
            labels: vec![ItemLabel::default(); b],
        })
    }

    pub fn from_items(items: &[Image]) -> Result<Self> {
        Self::new(stack(items)?)
    }

    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn item(&self, i: usize) -> Image {
        self.data.index_axis(Axis(0), i).to_owned()
    }
}

pub fn stack(items: &[Image]) -> Result<Array4<f64>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero images".into()))?;
    let (c, h, w) = first.dim();
    let mut out = Array4::zeros((items.len(), c, h, w));
    for (i, img) in items.iter().enumerate() {
        if img.dim() != (c, h, w) {
            return Err(Error::ShapeMismatch {
                expected: vec![c, h, w],
                actual: img.shape().to_vec(),
            });
        }
        out.slice_mut(s![i, .., .., ..]).assign(img);
    }
    Ok(out)
}

pub fn unstack(batch: &Array4<f64>) -> Vec<Image> {
    batch.outer_iter().map(|v| v.to_owned()).collect()
}

pub(crate) fn ensure_finite(values: impl IntoIterator<Item = f64>, context: &str) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Standard-normal array of the given shape.
pub fn gaussian_noise(shape: (usize, usize, usize, usize), seed: Seed) -> Array4<f64> {
    let mut rng = seed.rng();
    Array4::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
}

/// Bilinear resample to `size×size`, sampling at pixel centres.
pub fn resize(img: &Image, size: usize) -> Image {
    let (c, h, w) = img.dim();
    if h == size && w == size {
        return img.clone();
    }
    let mut out = Array3::zeros((c, size, size));
    let sy = h as f64 / size as f64;
    let sx = w as f64 / size as f64;
    for i in 0..size {
        let fy = ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for j in 0..size {
            let fx = ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let a = img[[ch, y0, x0]] * (1.0 - tx) + img[[ch, y0, x1]] * tx;
                let b = img[[ch, y1, x0]] * (1.0 - tx) + img[[ch, y1, x1]] * tx;
                out[[ch, i, j]] = a * (1.0 - ty) + b * ty;
            }
        }
    }
    out
}

/// Renormalises each pixel of a 3-channel map to a unit vector; near-zero
/// pixels become `fallback`.
pub fn normalize_vectors(map: &mut Image, fallback: [f64; 3]) {
    let (_, h, w) = map.dim();
    for i in 0..h {
        for j in 0..w {
            let v = [map[[0, i, j]], map[[1, i, j]], map[[2, i, j]]];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let u = if n > 1e-6 {
                [v[0] / n, v[1] / n, v[2] / n]
            } else {
                fallback
            };
            for k in 0..3 {
                map[[k, i, j]] = u[k];
            }
        }
    }
}

fn to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = img.dim();
    if c != 3 {
        return Err(Error::InvalidArgument(format!(
            "PNG export expects 3 channels, got {c}"
        )));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let (i, j) = (y as usize, x as usize);
        *px = image::Rgb([
            to_byte(img[[0, i, j]]),
            to_byte(img[[1, i, j]]),
            to_byte(img[[2, i, j]]),
        ]);
    }
    buf.save(path).map_err(|e| Error::ImageCodec {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let rgb = image::open(path)
        .map_err(|e| Error::ImageCodec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in rgb.enumerate_pixels() {
        for k in 0..3 {
            out[[k, y as usize, x as usize]] = px[k] as f64 / 255.0 * 2.0 - 1.0;
        }
    }
    Ok(out)
}

/// Encodes an image to PNG bytes in memory.
pub fn png_bytes(img: &Image) -> Result<Vec<u8>> {
    let (c, h, w) = img.dim();
    if c != 3 {
        return Err(Error::InvalidArgument(format!(
            "PNG export expects 3 channels, got {c}"
        )));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let (i, j) = (y as usize, x as usize);
        *px = image::Rgb([
            to_byte(img[[0, i, j]]),
            to_byte(img[[1, i, j]]),
            to_byte(img[[2, i, j]]),
        ]);
    }
    let mut out = Vec::new();
    image::DynamicImage::ImageRgb8(buf)
        .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| Error::ImageCodec {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array3::from_shape_fn((3, 5, 5), |(c, i, j)| {
            ((c * 25 + i * 5 + j) as f64 / 75.0) * 2.0 - 1.0
        });
        let p = dir.path().join("x.png");
        save_png(&img, &p).unwrap();
        let back = load_png(&p).unwrap();
        for (a, b) in img.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
        // extremes map exactly
        let mut e = Array3::from_elem((3, 2, 2), -1.0);
        e[[0, 0, 0]] = 1.0;
        save_png(&e, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), e);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = Array3::from_shape_fn((3, 4, 4), |(c, i, j)| (c + i * j) as f64 * 0.1);
        assert_eq!(resize(&img, 4), img);
        let up = resize(&img, 8);
        assert_eq!(up.dim(), (3, 8, 8));
    }

    #[test]
    fn non_square_batches_are_rejected() {
        assert!(ImageBatch::new(Array4::zeros((1, 3, 4, 5))).is_err());
        let mut bad = Array4::zeros((1, 3, 2, 2));
        bad[[0, 0, 0, 0]] = f64::NAN;
        assert!(ImageBatch::new(bad).is_err());
    }
}
