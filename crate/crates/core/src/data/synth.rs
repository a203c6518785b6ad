use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{write_jsonl, ClassTable, SampleDesc};
use crate::error::{Error, Result};
use crate::head::{BBox, GroundTruth};

/// Class names in id order: circle 0, square 1, triangle 2.
pub const SHAPE_NAMES: [&str; 3] = ["circle", "square", "triangle"];

const BACKGROUND_MAX: u8 = 160;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: usize,
    pub seed: u64,
    pub max_objects: usize,
    pub image_size: usize,
    /// Object centres land in distinct cells of this grid.
    pub grid: usize,
    /// Shape extent range in pixels.
    pub min_extent: usize,
    pub max_extent: usize,
}

impl SynthConfig {
    pub fn new(n: usize, classes: usize, seed: u64, max_objects: usize) -> Self {
        Self {
            n,
            classes,
            seed,
            max_objects,
            image_size: 88,
            grid: 4,
            min_extent: 14,
            max_extent: 34,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(1..=SHAPE_NAMES.len()).contains(&self.classes) {
            return bad(format!("classes must be 1..=3, got {}", self.classes));
        }
        if !(1..=10).contains(&self.max_objects) {
            return bad(format!("max_objects must be 1..=10, got {}", self.max_objects));
        }
        if self.max_objects > self.grid * self.grid {
            return bad(format!("{} objects cannot fit a {}x{} grid", self.max_objects, self.grid, self.grid));
        }
        if self.min_extent < 3 || self.min_extent > self.max_extent || self.max_extent >= self.image_size {
            return bad(format!(
                "extent range {}..={} invalid for {} px images",
                self.min_extent, self.max_extent, self.image_size
            ));
        }
        Ok(())
    }
}

/// Pixel-exact extent of a rendered shape: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Extent {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Extent {
    fn overlaps(&self, other: &Extent, margin: usize) -> bool {
        self.x0 < other.x1 + margin && other.x0 < self.x1 + margin && self.y0 < other.y1 + margin && other.y0 < self.y1 + margin
    }
}

/// Whether the pixel at `(px, py)` relative to the shape's top-left corner,
/// within an `s x s` square, is covered.
fn covers(class: usize, s: usize, px: usize, py: usize) -> bool {
    let (x, y, s) = (px as f32 + 0.5, py as f32 + 0.5, s as f32);
    match class {
        0 => {
            let r = s / 2.0;
            (x - r).powi(2) + (y - r).powi(2) <= r * r
        }
        1 => true,
        // Apex at top centre, base along the bottom row.
        _ => (x - s / 2.0).abs() <= y / 2.0,
    }
}

fn render_one(cfg: &SynthConfig, index: usize) -> (RgbImage, Vec<GroundTruth>) {
    let seed = cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.image_size;

    let base: [i32; 3] = [rng.gen_range(20..120), rng.gen_range(20..120), rng.gen_range(20..120)];
    let mut img = RgbImage::from_fn(size as u32, size as u32, |_, _| {
        let mut px = [0u8; 3];
        for (p, b) in px.iter_mut().zip(base) {
            *p = (b + rng.gen_range(-40..=40)).clamp(0, BACKGROUND_MAX as i32) as u8;
        }
        Rgb(px)
    });

    let count = rng.gen_range(1..=cfg.max_objects);
    let mut placed: Vec<(Extent, usize)> = Vec::new();
    let mut cells_used = Vec::new();
    for _ in 0..PLACEMENT_ATTEMPTS {
        if placed.len() == count {
            break;
        }
        let class = rng.gen_range(0..cfg.classes);
        let s = rng.gen_range(cfg.min_extent..=cfg.max_extent);
        let x0 = rng.gen_range(0..=size - s);
        let y0 = rng.gen_range(0..=size - s);
        let mut ext = Extent { x0: usize::MAX, y0: usize::MAX, x1: 0, y1: 0 };
        for py in 0..s {
            for px in 0..s {
                if covers(class, s, px, py) {
                    ext.x0 = ext.x0.min(x0 + px);
                    ext.y0 = ext.y0.min(y0 + py);
                    ext.x1 = ext.x1.max(x0 + px + 1);
                    ext.y1 = ext.y1.max(y0 + py + 1);
                }
            }
        }
        let cell_x = ((ext.x0 + ext.x1) * cfg.grid / (2 * size)).min(cfg.grid - 1);
        let cell_y = ((ext.y0 + ext.y1) * cfg.grid / (2 * size)).min(cfg.grid - 1);
        if cells_used.contains(&(cell_x, cell_y)) || placed.iter().any(|(e, _)| e.overlaps(&ext, 2)) {
            continue;
        }

        let mut colour = [rng.gen_range(0u8..=255), rng.gen_range(0u8..=255), rng.gen_range(0u8..=255)];
        colour[rng.gen_range(0..3)] = rng.gen_range(200..=255);
        for py in 0..s {
            for px in 0..s {
                if covers(class, s, px, py) {
                    img.put_pixel((x0 + px) as u32, (y0 + py) as u32, Rgb(colour));
                }
            }
        }
        cells_used.push((cell_x, cell_y));
        placed.push((ext, class));
    }

    let sz = size as f32;
    let boxes = placed
        .iter()
        .map(|&(e, class_id)| GroundTruth {
            bbox: BBox::from_corners(e.x0 as f32, e.y0 as f32, e.x1 as f32, e.y1 as f32, sz, sz),
            class_id,
        })
        .collect();
    (img, boxes)
}

/// Writes `images/NNNNN.png`, `annotations.jsonl` and `classes.txt` under
/// `out_dir`. Output depends only on the configuration.
pub fn synth_generate(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<SampleDesc>> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir)?;

    let descs = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let (img, boxes) = render_one(cfg, i);
            let rel = format!("images/{i:05}.png");
            let path = out_dir.join(&rel);
            img.save_with_format(&path, image::ImageFormat::Png)?;
            Ok(SampleDesc {
                image: path,
                boxes,
                source_id: rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    write_jsonl(out_dir.join("annotations.jsonl"), &descs, out_dir)?;
    let table = ClassTable::new(SHAPE_NAMES[..cfg.classes].iter().enumerate().map(|(i, n)| (n.to_string(), i)))?;
    std::fs::write(out_dir.join("classes.txt"), table.to_text())?;
    Ok(descs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::iou;

    #[test]
    fn boxes_match_rendered_pixels() {
        let cfg = SynthConfig::new(20, 3, 5, 3);
        for i in 0..cfg.n {
            let (img, boxes) = render_one(&cfg, i);
            assert!(!boxes.is_empty() && boxes.len() <= 3);
            for g in &boxes {
                let b = g.bbox;
                let s = 88.0;
                let (x0, x1) = (((b.cx - b.w / 2.0) * s).round() as u32, ((b.cx + b.w / 2.0) * s).round() as u32);
                let (y0, y1) = (((b.cy - b.h / 2.0) * s).round() as u32, ((b.cy + b.h / 2.0) * s).round() as u32);
                // Foreground pixels have a channel above the background ceiling.
                let fg = |x: u32, y: u32| img.get_pixel(x, y).0.iter().any(|&c| c >= 200);
                let (mut ex0, mut ey0, mut ex1, mut ey1) = (u32::MAX, u32::MAX, 0, 0);
                for y in y0.saturating_sub(1)..(y1 + 1).min(88) {
                    for x in x0.saturating_sub(1)..(x1 + 1).min(88) {
                        if fg(x, y) {
                            ex0 = ex0.min(x);
                            ey0 = ey0.min(y);
                            ex1 = ex1.max(x + 1);
                            ey1 = ey1.max(y + 1);
                        }
                    }
                }
                let truth = BBox::from_corners(ex0 as f32, ey0 as f32, ex1 as f32, ey1 as f32, s, s);
                assert_eq!(iou(&b, &truth), 1.0);
            }
        }
    }

    #[test]
    fn single_class_is_circles() {
        let cfg = SynthConfig::new(10, 1, 9, 3);
        for i in 0..10 {
            assert!(render_one(&cfg, i).1.iter().all(|g| g.class_id == 0));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_generate(&SynthConfig::new(1, 4, 0, 3), dir.path()).is_err());
        assert!(synth_generate(&SynthConfig::new(1, 1, 0, 11), dir.path()).is_err());
    }
}
