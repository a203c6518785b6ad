use image::{ColorType, DynamicImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Network input side length.
pub const INPUT_SIZE: usize = 88;

/// Bilinear resize of a CHW tensor with half-pixel centres and edge clamping.
/// Aspect ratio is not preserved.
pub fn resize_bilinear(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = src.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize", format!("target {out_h}x{out_w} is empty")));
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let data = src.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Squash-resizes to the network input and maps pixels to `(p - 128) / 128`.
pub fn preprocess(image: &DynamicImage) -> Result<Tensor> {
    preprocess_to(image, INPUT_SIZE, INPUT_SIZE)
}

pub fn preprocess_to(image: &DynamicImage, height: usize, width: usize) -> Result<Tensor> {
    let rgb = match (image.color(), image) {
        (ColorType::Rgb8, DynamicImage::ImageRgb8(rgb)) => rgb,
        (other, _) => {
            return Err(Error::InvalidArgument(format!("expected an 8-bit RGB image, got {other:?}")))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    let mut planar = vec![0.0f32; 3 * h * w];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            planar[ch * h * w + i] = px[ch] as f32;
        }
    }
    let mut t = resize_bilinear(&Tensor::new(vec![3, h, w], planar)?, height, width)?;
    for v in t.data_mut() {
        *v = (*v - 128.0) / 128.0;
    }
    Ok(t)
}
