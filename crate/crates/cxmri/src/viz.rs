//! Grayscale PNG export: magnitude images windowed to a percentile of the
//! reference, phase mapped linearly from [-pi, pi], and the side-by-side
//! comparison panels with scaled difference maps underneath.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Data(format!("png header: {e}")))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::Data(format!("png payload: {e}")))?;
    Ok(())
}

/// Upper window bound: the `p`-th percentile (0..=100) of the magnitudes.
pub fn magnitude_percentile(t: &ComplexTensor, p: f64) -> f64 {
    let mut mags: Vec<f64> = t.magnitude().re().to_vec();
    mags.sort_by(f64::total_cmp);
    if mags.is_empty() {
        return 0.0;
    }
    let idx = ((p / 100.0) * (mags.len() - 1) as f64).round() as usize;
    mags[idx.min(mags.len() - 1)]
}

/// Magnitude to 8-bit gray, clamped to `[0, hi]`.
pub fn magnitude_to_gray(t: &ComplexTensor, hi: f64) -> Vec<u8> {
    let scale = if hi > 0.0 { 255.0 / hi } else { 0.0 };
    t.magnitude()
        .re()
        .iter()
        .map(|&v| (v * scale).clamp(0.0, 255.0) as u8)
        .collect()
}

/// Phase to 8-bit gray, `[-pi, pi]` mapped linearly onto `[0, 255]`.
pub fn phase_to_gray(t: &ComplexTensor) -> Vec<u8> {
    t.phase()
        .re()
        .iter()
        .map(|&v| {
            ((v + std::f64::consts::PI) / std::f64::consts::TAU * 255.0).clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Lay out equally sized tiles in a grid with 2-pixel separators.
pub fn tile_grid(
    tiles: &[Vec<u8>],
    tile_h: usize,
    tile_w: usize,
    columns: usize,
) -> (Vec<u8>, usize, usize) {
    const GAP: usize = 2;
    let rows = tiles.len().div_ceil(columns);
    let out_w = columns * tile_w + (columns - 1) * GAP;
    let out_h = rows * tile_h + (rows - 1) * GAP;
    let mut out = vec![255u8; out_w * out_h];
    for (i, tile) in tiles.iter().enumerate() {
        let (r, c) = (i / columns, i % columns);
        let oy = r * (tile_h + GAP);
        let ox = c * (tile_w + GAP);
        for y in 0..tile_h {
            let dst = (oy + y) * out_w + ox;
            out[dst..dst + tile_w].copy_from_slice(&tile[y * tile_w..(y + 1) * tile_w]);
        }
    }
    (out, out_w, out_h)
}

/// Comparison panel: one row of magnitude (or phase) tiles per method, and a
/// second row of difference maps against the last column (the ground truth),
/// scaled by `diff_scale`.
pub struct Panel<'a> {
    /// (label kept by the caller, image) pairs; the last entry must be the
    /// ground truth.
    pub images: Vec<&'a ComplexTensor>,
    pub diff_scale: f64,
}

impl Panel<'_> {
    fn shape(&self) -> (usize, usize) {
        let s = self.images[0].shape();
        (s[s.len() - 2], s[s.len() - 1])
    }

    /// Magnitude panel windowed to the 99.5th percentile of the ground truth.
    pub fn magnitude(&self) -> (Vec<u8>, usize, usize) {
        let truth = *self.images.last().expect("panel needs images");
        let hi = magnitude_percentile(truth, 99.5);
        let (h, w) = self.shape();
        let mut tiles: Vec<Vec<u8>> = self
            .images
            .iter()
            .map(|img| magnitude_to_gray(img, hi))
            .collect();
        for img in &self.images {
            let diff = img.sub(truth).unwrap();
            let scaled: Vec<u8> = diff
                .magnitude()
                .re()
                .iter()
                .map(|&v| ((v * self.diff_scale) / hi * 255.0).clamp(0.0, 255.0) as u8)
                .collect();
            tiles.push(scaled);
        }
        tile_grid(&tiles, h, w, self.images.len())
    }

    /// Phase panel with wrapped-phase difference maps.
    pub fn phase(&self) -> (Vec<u8>, usize, usize) {
        let truth = *self.images.last().expect("panel needs images");
        let (h, w) = self.shape();
        let mut tiles: Vec<Vec<u8>> = self.images.iter().map(|img| phase_to_gray(img)).collect();
        for img in &self.images {
            let scaled: Vec<u8> = img
                .phase()
                .re()
                .iter()
                .zip(truth.phase().re())
                .map(|(&a, &b)| {
                    let mut d = a - b;
                    if d > std::f64::consts::PI {
                        d -= std::f64::consts::TAU;
                    } else if d < -std::f64::consts::PI {
                        d += std::f64::consts::TAU;
                    }
                    ((d.abs() * self.diff_scale) / std::f64::consts::PI * 255.0).clamp(0.0, 255.0)
                        as u8
                })
                .collect();
            tiles.push(scaled);
        }
        tile_grid(&tiles, h, w, self.images.len())
    }
}
