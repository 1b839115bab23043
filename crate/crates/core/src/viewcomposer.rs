//! Square preprocessing and 2x2 multi-view tiling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edgecontrol::EdgeMap;
use crate::raster::{GrayImage, RgbImage};

/// Height of each black bar, as a fraction of the cropped square side.
pub const DEFAULT_PAD_FRACTION: f64 = 0.08;

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("empty image")]
    EmptyImage,
    #[error("view set must hold 1 to 4 views, got {0}")]
    ViewCount(usize),
    #[error("duplicate view label {0:?}")]
    DuplicateLabel(String),
    #[error("view {label:?} is {got:?}, tile size is {expected}")]
    WrongSize { label: String, expected: usize, got: (usize, usize) },
    #[error("tiled image is {got:?}, expected {expected}x{expected}")]
    DimensionMismatch { expected: usize, got: (usize, usize) },
    #[error("pad fraction {0} outside [0, 0.5)")]
    PadFraction(f64),
    #[error("tile size must be positive")]
    ZeroTile,
}

/// Center-crop to the largest square, add black bars top and bottom, then
/// bilinear-resize to `out_size` square.
pub fn preprocess(img: &RgbImage, out_size: usize) -> Result<RgbImage, ViewError> {
    preprocess_with(img, out_size, DEFAULT_PAD_FRACTION)
}

pub fn preprocess_with(img: &RgbImage, out_size: usize, pad_fraction: f64) -> Result<RgbImage, ViewError> {
    if img.is_empty() || out_size == 0 {
        return Err(ViewError::EmptyImage);
    }
    if !(0.0..0.5).contains(&pad_fraction) {
        return Err(ViewError::PadFraction(pad_fraction));
    }
    let square = center_crop(img);
    let padded = pad_bars(&square, pad_fraction);
    Ok(resize_bilinear(&padded, out_size, out_size))
}

pub fn center_crop(img: &RgbImage) -> RgbImage {
    let side = img.width().min(img.height());
    let x0 = (img.width() - side) / 2;
    let y0 = (img.height() - side) / 2;
    img.crop(x0, y0, side, side)
}

/// Bar height in pixels for a square of the given side.
pub fn bar_height(side: usize, pad_fraction: f64) -> usize {
    (pad_fraction * side as f64).round() as usize
}

/// Adds equal black bars above and below.
pub fn pad_bars(img: &RgbImage, pad_fraction: f64) -> RgbImage {
    let bar = bar_height(img.width(), pad_fraction);
    if bar == 0 {
        return img.clone();
    }
    let mut out = RgbImage::new(img.width(), img.height() + 2 * bar);
    out.blit(img, 0, bar);
    out
}

/// Bilinear resampling with pixel centers at `i + 0.5`; samples outside
/// the source are clamped to the border. Same-size input is returned
/// unchanged.
pub fn resize_bilinear(img: &RgbImage, out_w: usize, out_h: usize) -> RgbImage {
    if img.width() == out_w && img.height() == out_h {
        return img.clone();
    }
    let xs = taps(img.width(), out_w);
    let ys = taps(img.height(), out_h);
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = img.get(x0, y0);
            let p10 = img.get(x1, y0);
            let p01 = img.get(x0, y1);
            let p11 = img.get(x1, y1);
            for c in 0..3 {
                let top = p00[c] as f64 + (p10[c] as f64 - p00[c] as f64) * fx;
                let bot = p01[c] as f64 + (p11[c] as f64 - p01[c] as f64) * fx;
                let v = top + (bot - top) * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::from_raw(out_w, out_h, data).expect("sized buffer")
}

fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Fixed 2x2 grid of square tiles, slots in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub tile_size: usize,
}

impl TileLayout {
    pub const SLOTS: usize = 4;

    pub fn new(tile_size: usize) -> Result<Self, ViewError> {
        if tile_size == 0 {
            return Err(ViewError::ZeroTile);
        }
        Ok(Self { tile_size })
    }

    pub fn canvas_size(&self) -> usize {
        2 * self.tile_size
    }

    /// Top-left corner of slot `k`.
    pub fn origin(&self, k: usize) -> (usize, usize) {
        assert!(k < Self::SLOTS);
        ((k % 2) * self.tile_size, (k / 2) * self.tile_size)
    }

    /// Slot containing canvas pixel `(x, y)`.
    pub fn slot_of(&self, x: usize, y: usize) -> usize {
        (y / self.tile_size) * 2 + x / self.tile_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    views: Vec<(String, RgbImage)>,
}

impl ViewSet {
    pub fn new(views: Vec<(String, RgbImage)>) -> Result<Self, ViewError> {
        if views.is_empty() || views.len() > TileLayout::SLOTS {
            return Err(ViewError::ViewCount(views.len()));
        }
        for (i, (label, _)) in views.iter().enumerate() {
            if views[..i].iter().any(|(l, _)| l == label) {
                return Err(ViewError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.views.iter().map(|(l, _)| l.as_str()).collect()
    }

    pub fn get(&self, label: &str) -> Option<&RgbImage> {
        self.views.iter().find(|(l, _)| l == label).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RgbImage)> {
        self.views.iter().map(|(l, v)| (l.as_str(), v))
    }

    pub fn into_inner(self) -> Vec<(String, RgbImage)> {
        self.views
    }
}

/// Places view `k` in slot `k`; unused slots stay black.
pub fn tile(views: &ViewSet, layout: &TileLayout) -> Result<RgbImage, ViewError> {
    let t = layout.tile_size;
    let mut out = RgbImage::new(layout.canvas_size(), layout.canvas_size());
    for (k, (label, img)) in views.iter().enumerate() {
        if img.width() != t || img.height() != t {
            return Err(ViewError::WrongSize {
                label: label.to_string(),
                expected: t,
                got: (img.width(), img.height()),
            });
        }
        let (x0, y0) = layout.origin(k);
        out.blit(img, x0, y0);
    }
    Ok(out)
}

/// Extracts the first `labels.len()` quadrants; the rest are discarded.
pub fn untile(img: &RgbImage, layout: &TileLayout, labels: &[&str]) -> Result<ViewSet, ViewError> {
    let n = layout.canvas_size();
    if img.width() != n || img.height() != n {
        return Err(ViewError::DimensionMismatch { expected: n, got: (img.width(), img.height()) });
    }
    let views = labels
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let (x0, y0) = layout.origin(k);
            (l.to_string(), img.crop(x0, y0, layout.tile_size, layout.tile_size))
        })
        .collect();
    ViewSet::new(views)
}

/// Tiles per-view edge maps the same way [`tile`] tiles color views.
pub fn tile_edges(maps: &[EdgeMap], layout: &TileLayout) -> Result<EdgeMap, ViewError> {
    if maps.is_empty() || maps.len() > TileLayout::SLOTS {
        return Err(ViewError::ViewCount(maps.len()));
    }
    let t = layout.tile_size;
    let n = layout.canvas_size();
    let mut out = GrayImage::new(n, n);
    for (k, m) in maps.iter().enumerate() {
        if m.width() != t || m.height() != t {
            return Err(ViewError::WrongSize { label: format!("slot {k}"), expected: t, got: (m.width(), m.height()) });
        }
        let (x0, y0) = layout.origin(k);
        for y in 0..t {
            for x in 0..t {
                out.set(x0 + x, y0 + y, m.as_gray().get(x, y));
            }
        }
    }
    Ok(EdgeMap::from_gray(out).expect("binary input stays binary"))
}
