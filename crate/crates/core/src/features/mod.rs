//! Patch features for grayscale images.
//!
//! Pixel features are the full `P × P` block DCT of each non-overlapping patch. The
//! semantic proxy keeps only the top-left `L × L` low-frequency block. Images whose
//! sides are not multiples of `P` are center-cropped first.

mod dct;
mod pnm;

pub use dct::{dct2, idct2, Dct2};
pub use pnm::{decode_pnm, encode_pgm, load_image, save_pgm};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;

/// Row-major luma image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} image with {} pixels",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Non-overlapping square patches of side `patch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    patch: usize,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { patch: 8 }
    }
}

impl PatchSpec {
    pub fn new(patch: usize) -> Result<Self> {
        if patch == 0 {
            return Err(Error::Argument("patch size must be at least 1".into()));
        }
        Ok(Self { patch })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Pixel feature dimension, `P²`.
    pub fn dim(&self) -> usize {
        self.patch * self.patch
    }
}

/// Crops `img` symmetrically so both sides are multiples of the patch size.
pub fn center_crop(img: &GrayImage, spec: PatchSpec) -> Result<GrayImage> {
    let p = spec.patch;
    let (h, w) = (img.height / p * p, img.width / p * p);
    if h == 0 || w == 0 {
        return Err(Error::Argument(format!(
            "{}x{} image is smaller than one {p}x{p} patch",
            img.height, img.width
        )));
    }
    if (h, w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let (top, left) = ((img.height - h) / 2, (img.width - w) / 2);
    let mut data = Vec::with_capacity(h * w);
    for r in top..top + h {
        data.extend_from_slice(&img.data[r * img.width + left..r * img.width + left + w]);
    }
    GrayImage::new(h, w, data)
}

fn patch_values(img: &GrayImage, p: usize, pr: usize, pc: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(p * p);
    for r in 0..p {
        let start = (pr * p + r) * img.width + pc * p;
        out.extend_from_slice(&img.data[start..start + p]);
    }
    out
}

/// Grid of `(H/P) × (W/P)` cells, each holding the `P²` DCT coefficients of its patch.
pub fn pixel_features(img: &GrayImage, spec: PatchSpec) -> Result<FeatureGrid> {
    let img = center_crop(img, spec)?;
    let p = spec.patch;
    let (gh, gw) = (img.height / p, img.width / p);
    let dct = Dct2::new(p);
    let cells: Vec<Vec<f32>> = (0..gh * gw)
        .into_par_iter()
        .map(|c| dct.forward(&patch_values(&img, p, c / gw, c % gw)))
        .collect();
    FeatureGrid::new(gh, gw, p * p, cells.concat())
}

/// Keeps the top-left `low × low` coefficients of each `P × P` cell, row-major.
pub fn low_band(pixel: &FeatureGrid, spec: PatchSpec, low: usize) -> Result<FeatureGrid> {
    let p = spec.patch;
    check_low(p, low)?;
    if pixel.dim() != p * p {
        return Err(Error::Shape(format!(
            "expected {} coefficients per cell, got {}",
            p * p,
            pixel.dim()
        )));
    }
    let mut data = Vec::with_capacity(pixel.cells() * low * low);
    for cell in pixel.iter_cells() {
        for u in 0..low {
            data.extend_from_slice(&cell[u * p..u * p + low]);
        }
    }
    FeatureGrid::new(pixel.height(), pixel.width(), low * low, data)
}

/// Places `low × low` coefficient blocks back into zeroed `P × P` blocks.
pub fn embed_low_band(band: &FeatureGrid, spec: PatchSpec, low: usize) -> Result<FeatureGrid> {
    let p = spec.patch;
    check_low(p, low)?;
    if band.dim() != low * low {
        return Err(Error::Shape(format!(
            "expected {} coefficients per cell, got {}",
            low * low,
            band.dim()
        )));
    }
    let mut data = vec![0.0; band.cells() * p * p];
    for (cell, out) in band.iter_cells().zip(data.chunks_exact_mut(p * p)) {
        for u in 0..low {
            out[u * p..u * p + low].copy_from_slice(&cell[u * low..(u + 1) * low]);
        }
    }
    FeatureGrid::new(band.height(), band.width(), p * p, data)
}

fn check_low(p: usize, low: usize) -> Result<()> {
    if low == 0 || low > p {
        return Err(Error::Argument(format!("low band {low} must lie in 1..={p}")));
    }
    Ok(())
}

/// Semantic stand-in: the low-frequency `low × low` DCT block of every patch.
pub fn semantic_proxy_features(img: &GrayImage, spec: PatchSpec, low: usize) -> Result<FeatureGrid> {
    check_low(spec.patch, low)?;
    low_band(&pixel_features(img, spec)?, spec, low)
}

/// Semantic proxy and pixel features of one image, computed from a single DCT pass.
pub fn paired_features(img: &GrayImage, spec: PatchSpec, low: usize) -> Result<(FeatureGrid, FeatureGrid)> {
    check_low(spec.patch, low)?;
    let pix = pixel_features(img, spec)?;
    Ok((low_band(&pix, spec, low)?, pix))
}

/// Inverse DCT of every cell, tiled back into an image and clamped to `[0, 1]`.
pub fn reconstruct_image(pix: &FeatureGrid, spec: PatchSpec) -> Result<GrayImage> {
    let p = spec.patch;
    if pix.dim() != p * p {
        return Err(Error::Shape(format!(
            "reconstruction needs {} coefficients per cell, got {}",
            p * p,
            pix.dim()
        )));
    }
    let (h, w) = (pix.height() * p, pix.width() * p);
    let dct = Dct2::new(p);
    let patches: Vec<Vec<f32>> = pix
        .iter_cells()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|c| dct.inverse(c))
        .collect();
    let mut data = vec![0.0; h * w];
    for (c, patch) in patches.iter().enumerate() {
        let (pr, pc) = (c / pix.width(), c % pix.width());
        for r in 0..p {
            let start = (pr * p + r) * w + pc * p;
            for (dst, &v) in data[start..start + p].iter_mut().zip(&patch[r * p..(r + 1) * p]) {
                *dst = v.clamp(0.0, 1.0);
            }
        }
    }
    GrayImage::new(h, w, data)
}

/// Reconstruction from low-band features only, with all higher frequencies zeroed.
pub fn reconstruct_low_band(band: &FeatureGrid, spec: PatchSpec, low: usize) -> Result<GrayImage> {
    reconstruct_image(&embed_low_band(band, spec, low)?, spec)
}
