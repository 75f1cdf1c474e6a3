use log::warn;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Sharpen,
    Blur,
}

impl FilterKind {
    /// Integer weights and divisor; both kernels sum to one.
    fn kernel(self) -> ([i32; 9], i32) {
        match self {
            FilterKind::Sharpen => ([0, -1, 0, -1, 5, -1, 0, -1, 0], 1),
            FilterKind::Blur => ([1; 9], 9),
        }
    }
}

/// Caffe-style channel means in BGR order.
pub const BGR_MEANS: [f32; 3] = [103.939, 116.779, 123.68];

fn convolve3x3<T: Copy>(
    img: &[T],
    (c, h, w): (usize, usize, usize),
    mut at: impl FnMut([T; 9]) -> T,
) -> Vec<T> {
    let mut out = Vec::with_capacity(img.len());
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut win = [plane[0]; 9];
                for dy in 0..3 {
                    for dx in 0..3 {
                        let yy = (y + dy).saturating_sub(1).min(h - 1);
                        let xx = (x + dx).saturating_sub(1).min(w - 1);
                        win[dy * 3 + dx] = plane[yy * w + xx];
                    }
                }
                out.push(at(win));
            }
        }
    }
    out
}

/// 3×3 filter with replicate borders, clamped to `[0, 255]` and rounded.
pub fn apply_filter(img: &[u8], dims: (usize, usize, usize), kind: FilterKind) -> Vec<u8> {
    let (k, div) = kind.kernel();
    convolve3x3(img, dims, |win| {
        let s: i32 = win.iter().zip(&k).map(|(&p, &w)| p as i32 * w).sum();
        (s as f64 / div as f64).round().clamp(0.0, 255.0) as u8
    })
}

/// The same filter on real-valued pixels, without clamping.
pub fn apply_filter_real(img: &[f32], dims: (usize, usize, usize), kind: FilterKind) -> Vec<f32> {
    let (k, div) = kind.kernel();
    convolve3x3(img, dims, |win| {
        let s: f64 = win.iter().zip(&k).map(|(&p, &w)| p as f64 * w as f64).sum();
        (s / div as f64) as f32
    })
}

/// RGB → BGR and per-channel mean subtraction, no scaling.
pub fn preprocess(img: &[f32], (c, h, w): (usize, usize, usize)) -> Result<Vec<f32>> {
    if c != 3 {
        return Err(Error::Data(format!(
            "preprocess needs 3-channel RGB input, got {c} channel(s); convert first"
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(img.len());
    for (bgr, mean) in BGR_MEANS.iter().enumerate() {
        let rgb = 2 - bgr;
        out.extend(img[rgb * plane..(rgb + 1) * plane].iter().map(|v| v - mean));
    }
    Ok(out)
}

/// Nearest-neighbour ×2 upsampling of a `[C, H, W]` image.
pub fn upsample2x<T: Copy>(img: &[T], (c, h, w): (usize, usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(img.len() * 4);
    for ch in 0..c {
        for y in 0..2 * h {
            let row = &img[ch * h * w + (y / 2) * w..][..w];
            for x in 0..2 * w {
                out.push(row[x / 2]);
            }
        }
    }
    out
}

/// Replicates the single channel three times.
pub fn gray_to_rgb<T: Copy>(img: &[T]) -> Vec<T> {
    [img, img, img].concat()
}

/// Grayscale → 3 channels with unchanged pixels; 3-channel input is returned
/// unchanged with a warning.
pub fn to_rgb(d: &Dataset) -> Result<Dataset> {
    if d.channels() == 3 {
        warn!("to_rgb: {} already has 3 channels", d.source);
        return Ok(d.clone());
    }
    let mut images = Vec::with_capacity(d.images().len() * 3);
    for i in 0..d.len() {
        images.extend(gray_to_rgb(d.image(i)));
    }
    d.with_images(images, (3, d.height(), d.width()))
}
