//! Canny edge extraction and edge-map post-processing (thickening and
//! gap bridging) used to build control videos.
//!
//! The detector works in exact integer arithmetic after the blur: the
//! Gaussian kernel is quantized to integers summing to 4096 per axis, the
//! blurred image is rounded back to 8 bits, Sobel gradients are integers
//! and all magnitude comparisons use squared magnitudes. Borders use
//! clamp-to-edge reads everywhere.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{GrayImage, RgbImage};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("image {width}x{height} is smaller than the {kernel}x{kernel} blur kernel")]
    ImageTooSmall { width: usize, height: usize, kernel: usize },
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    SizeMismatch { index: usize, expected: (usize, usize), got: (usize, usize) },
    #[error("control video needs at least one frame")]
    Empty,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("edge map values must be 0 or 255")]
    NotBinary,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Raster(#[from] crate::raster::RasterError),
    #[error("metadata: {0}")]
    Metadata(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyParams {
    pub gaussian_sigma: f64,
    pub kernel_size: usize,
    pub low_threshold: u8,
    pub high_threshold: u8,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { gaussian_sigma: 1.4, kernel_size: 5, low_threshold: 50, high_threshold: 150 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), EdgeError> {
        if self.kernel_size < 3 || self.kernel_size.is_multiple_of(2) {
            return Err(EdgeError::InvalidParams(format!(
                "kernel_size must be odd and >= 3, got {}",
                self.kernel_size
            )));
        }
        if self.low_threshold >= self.high_threshold {
            return Err(EdgeError::InvalidParams("low_threshold must be < high_threshold".into()));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(EdgeError::InvalidParams("gaussian_sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub thicken_iters: usize,
    pub bridge_kernel: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { thicken_iters: 1, bridge_kernel: 5 }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), EdgeError> {
        if self.bridge_kernel == 0 || self.bridge_kernel.is_multiple_of(2) {
            return Err(EdgeError::InvalidParams(format!(
                "bridge_kernel must be odd and >= 1, got {}",
                self.bridge_kernel
            )));
        }
        Ok(())
    }
}

/// Binary edge image: every pixel is 0 or 255.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeMap(GrayImage);

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self(GrayImage::new(width, height))
    }

    pub fn from_gray(img: GrayImage) -> Result<Self, EdgeError> {
        if img.data().iter().all(|&v| v == 0 || v == 255) {
            Ok(Self(img))
        } else {
            Err(EdgeError::NotBinary)
        }
    }

    /// Builds a map from a predicate over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut on: impl FnMut(usize, usize) -> bool) -> Self {
        Self(GrayImage::from_fn(width, height, |x, y| if on(x, y) { 255 } else { 0 }))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    #[inline]
    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) != 0
    }

    pub fn as_gray(&self) -> &GrayImage {
        &self.0
    }

    pub fn into_gray(self) -> GrayImage {
        self.0
    }

    pub fn edge_count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v != 0).count()
    }

    /// Whether every edge pixel of `self` is also an edge in `other`.
    pub fn is_subset_of(&self, other: &EdgeMap) -> bool {
        self.0.data().iter().zip(other.0.data()).all(|(&a, &b)| a == 0 || b != 0)
    }
}

/// Per-axis Gaussian weights quantized to integers summing to exactly 4096.
pub fn gaussian_kernel_q12(sigma: f64, size: usize) -> Vec<u32> {
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let mut k: Vec<u32> = raw.iter().map(|w| (w / total * 4096.0).round() as u32).collect();
    let sum: u32 = k.iter().sum();
    let c = size / 2;
    // absorb rounding drift in the center tap
    k[c] = (k[c] as i64 + 4096 - sum as i64) as u32;
    k
}

/// Separable integer Gaussian blur; result rounded to nearest 8-bit value.
pub fn gaussian_blur(img: &GrayImage, kernel: &[u32]) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let r = (kernel.len() / 2) as isize;
    let mut horiz = vec![0u64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0u64;
            for (i, &k) in kernel.iter().enumerate() {
                let sx = x as isize + i as isize - r;
                acc += k as u64 * img.get_clamped(sx, y as isize) as u64;
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0u64;
            for (j, &k) in kernel.iter().enumerate() {
                let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                acc += k as u64 * horiz[sy * w + x];
            }
            out[y * w + x] = ((acc + (1 << 23)) >> 24) as u8;
        }
    }
    GrayImage::from_raw(w, h, out).expect("dimensions preserved")
}

/// Sobel gradients `(gx, gy)`; `gy` grows downward.
pub fn sobel(img: &GrayImage) -> (Vec<i32>, Vec<i32>) {
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0i32; w * h];
    let mut gy = vec![0i32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy) as i32;
            let i = y as usize * w + x as usize;
            gx[i] = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            gy[i] = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

const TAN_22_5: f64 = std::f64::consts::SQRT_2 - 1.0;
const TAN_67_5: f64 = std::f64::consts::SQRT_2 + 1.0;

/// Neighbor offsets `(before, after)` along the quantized gradient direction.
#[inline]
fn nms_offsets(gx: i32, gy: i32) -> ((isize, isize), (isize, isize)) {
    let ax = gx.unsigned_abs() as f64;
    let ay = gy.unsigned_abs() as f64;
    if ay <= TAN_22_5 * ax {
        ((-1, 0), (1, 0))
    } else if ay >= TAN_67_5 * ax {
        ((0, -1), (0, 1))
    } else if (gx > 0) == (gy > 0) {
        ((-1, -1), (1, 1))
    } else {
        ((1, -1), (-1, 1))
    }
}

/// Squared gradient magnitudes that survive non-maximum suppression
/// (suppressed pixels are zero). Plateaus keep their first pixel along the
/// gradient direction.
pub fn non_maximum_suppression(w: usize, h: usize, gx: &[i32], gy: &[i32]) -> Vec<i64> {
    let mag: Vec<i64> = gx.iter().zip(gy).map(|(&a, &b)| a as i64 * a as i64 + b as i64 * b as i64).collect();
    let at = |x: isize, y: isize| {
        let cx = x.clamp(0, w as isize - 1) as usize;
        let cy = y.clamp(0, h as isize - 1) as usize;
        mag[cy * w + cx]
    };
    let mut out = vec![0i64; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m == 0 {
                continue;
            }
            let ((ax, ay), (bx, by)) = nms_offsets(gx[i], gy[i]);
            let (xi, yi) = (x as isize, y as isize);
            if m > at(xi + ax, yi + ay) && m >= at(xi + bx, yi + by) {
                out[i] = m;
            }
        }
    }
    out
}

/// Double-threshold hysteresis over squared magnitudes, 8-connected.
pub fn hysteresis(w: usize, h: usize, mag2: &[i64], low: u8, high: u8) -> EdgeMap {
    let low2 = low as i64 * low as i64;
    let high2 = high as i64 * high as i64;
    let mut out = vec![0u8; w * h];
    let mut stack = Vec::new();
    for i in 0..w * h {
        if mag2[i] >= high2 && mag2[i] > 0 && out[i] == 0 {
            out[i] = 255;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (x, y) = ((j % w) as isize, (j / w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let k = ny as usize * w + nx as usize;
                        if out[k] == 0 && mag2[k] >= low2 && mag2[k] > 0 {
                            out[k] = 255;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    EdgeMap(GrayImage::from_raw(w, h, out).expect("dimensions preserved"))
}

/// Blur, Sobel, non-maximum suppression and hysteresis.
pub fn canny(img: &GrayImage, params: &CannyParams) -> Result<EdgeMap, EdgeError> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < params.kernel_size || h < params.kernel_size {
        return Err(EdgeError::ImageTooSmall { width: w, height: h, kernel: params.kernel_size });
    }
    let kernel = gaussian_kernel_q12(params.gaussian_sigma, params.kernel_size);
    let blurred = gaussian_blur(img, &kernel);
    let (gx, gy) = sobel(&blurred);
    let thin = non_maximum_suppression(w, h, &gx, &gy);
    Ok(hysteresis(w, h, &thin, params.low_threshold, params.high_threshold))
}

#[derive(Clone, Copy)]
enum Morph {
    Dilate,
    Erode,
}

/// Square `k x k` dilation or erosion with clamp-to-edge borders.
fn morph_square(map: &EdgeMap, k: usize, op: Morph) -> EdgeMap {
    if k <= 1 {
        return map.clone();
    }
    let (w, h) = (map.width(), map.height());
    let r = (k / 2) as isize;
    let src = map.0.data();
    let pick = |acc: bool, v: bool| match op {
        Morph::Dilate => acc || v,
        Morph::Erode => acc && v,
    };
    let init = matches!(op, Morph::Erode);
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = init;
            for dx in -r..=r {
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                acc = pick(acc, src[y * w + sx] != 0);
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = init;
            for dy in -r..=r {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                acc = pick(acc, rows[sy * w + x]);
            }
            out[y * w + x] = if acc { 255 } else { 0 };
        }
    }
    EdgeMap(GrayImage::from_raw(w, h, out).expect("dimensions preserved"))
}

pub fn dilate(map: &EdgeMap, k: usize) -> EdgeMap {
    morph_square(map, k, Morph::Dilate)
}

pub fn erode(map: &EdgeMap, k: usize) -> EdgeMap {
    morph_square(map, k, Morph::Erode)
}

/// `iters` rounds of 3x3 dilation.
pub fn thicken(map: &EdgeMap, iters: usize) -> EdgeMap {
    let mut out = map.clone();
    for _ in 0..iters {
        out = dilate(&out, 3);
    }
    out
}

/// Morphological closing with a `kernel x kernel` square.
pub fn bridge(map: &EdgeMap, kernel: usize) -> Result<EdgeMap, EdgeError> {
    FilterParams { thicken_iters: 0, bridge_kernel: kernel }.validate()?;
    Ok(erode(&dilate(map, kernel), kernel))
}

/// Number of 8-connected edge components.
pub fn count_components(map: &EdgeMap) -> usize {
    let (w, h) = (map.width(), map.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || !map.is_edge(start % w, start / w) {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(j) = stack.pop() {
            let (x, y) = ((j % w) as isize, (j / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let k = ny as usize * w + nx as usize;
                    if !seen[k] && map.is_edge(nx as usize, ny as usize) {
                        seen[k] = true;
                        stack.push(k);
                    }
                }
            }
        }
    }
    count
}

/// Canny followed by thickening then bridging.
pub fn control_frame(img: &GrayImage, cparams: &CannyParams, fparams: &FilterParams) -> Result<EdgeMap, EdgeError> {
    fparams.validate()?;
    let edges = canny(img, cparams)?;
    bridge(&thicken(&edges, fparams.thicken_iters), fparams.bridge_kernel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlVideo {
    pub frames: Vec<EdgeMap>,
    pub fps: f64,
}

impl ControlVideo {
    pub fn new(frames: Vec<EdgeMap>, fps: f64) -> Result<Self, EdgeError> {
        let first = frames.first().ok_or(EdgeError::Empty)?;
        let dims = (first.width(), first.height());
        for (index, f) in frames.iter().enumerate() {
            if (f.width(), f.height()) != dims {
                return Err(EdgeError::SizeMismatch { index, expected: dims, got: (f.width(), f.height()) });
            }
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.frames[0].width(), self.frames[0].height())
    }

    /// Writes `000001.png, 000002.png, ...` and `meta.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, meta: &ControlVideoMeta) -> Result<(), EdgeError> {
        std::fs::create_dir_all(dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            f.as_gray().save_png(dir.join(format!("{:06}.png", i + 1)))?;
        }
        std::fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(meta)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<(Self, ControlVideoMeta), EdgeError> {
        let meta: ControlVideoMeta = serde_json::from_slice(&std::fs::read(dir.join("meta.json"))?)?;
        let mut frames = Vec::with_capacity(meta.frames);
        for i in 0..meta.frames {
            let g = GrayImage::load_png(dir.join(format!("{:06}.png", i + 1)))?;
            frames.push(EdgeMap::from_gray(g)?);
        }
        Ok((Self::new(frames, meta.fps)?, meta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVideoMeta {
    pub fps: f64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub canny: CannyParams,
    pub filter: FilterParams,
}

/// Per-frame control extraction; frames are processed in parallel and
/// the output order matches the input.
pub fn make_control_video(
    frames: &[GrayImage],
    cparams: &CannyParams,
    fparams: &FilterParams,
    fps: f64,
) -> Result<ControlVideo, EdgeError> {
    let first = frames.first().ok_or(EdgeError::Empty)?;
    let dims = (first.width(), first.height());
    for (index, f) in frames.iter().enumerate() {
        if (f.width(), f.height()) != dims {
            return Err(EdgeError::SizeMismatch { index, expected: dims, got: (f.width(), f.height()) });
        }
    }
    let maps = frames.par_iter().map(|f| control_frame(f, cparams, fparams)).collect::<Result<Vec<_>, _>>()?;
    ControlVideo::new(maps, fps)
}

pub fn make_control_video_rgb(
    frames: &[RgbImage],
    cparams: &CannyParams,
    fparams: &FilterParams,
    fps: f64,
) -> Result<ControlVideo, EdgeError> {
    let gray: Vec<GrayImage> = frames.iter().map(RgbImage::to_gray).collect();
    make_control_video(&gray, cparams, fparams, fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step_image() -> GrayImage {
        GrayImage::from_fn(64, 64, |x, _| if x < 32 { 0 } else { 255 })
    }

    #[test]
    fn kernel_sums_to_4096_and_is_symmetric() {
        for (sigma, size) in [(1.4, 5), (0.8, 3), (2.0, 9), (0.3, 7)] {
            let k = gaussian_kernel_q12(sigma, size);
            assert_eq!(k.iter().sum::<u32>(), 4096);
            for i in 0..size {
                assert_eq!(k[i], k[size - 1 - i]);
            }
        }
    }

    #[test]
    fn uniform_image_has_no_edges() {
        let e = canny(&GrayImage::filled(64, 64, 128), &CannyParams::default()).unwrap();
        assert_eq!(e.edge_count(), 0);
    }

    #[test]
    fn vertical_step_gives_one_band() {
        let e = canny(&step_image(), &CannyParams::default()).unwrap();
        for y in 0..64 {
            let cols: Vec<usize> = (0..64).filter(|&x| e.is_edge(x, y)).collect();
            assert!(!cols.is_empty(), "row {y} empty");
            assert!(cols.iter().all(|&x| (30..=33).contains(&x)), "row {y}: {cols:?}");
        }
        assert_eq!(count_components(&e), 1);
    }

    #[test]
    fn too_small_image_rejected() {
        let err = canny(&GrayImage::new(4, 10), &CannyParams::default()).unwrap_err();
        assert!(matches!(err, EdgeError::ImageTooSmall { .. }));
    }

    #[test]
    fn params_validated() {
        let bad = CannyParams { kernel_size: 4, ..Default::default() };
        assert!(canny(&step_image(), &bad).is_err());
        let bad = CannyParams { low_threshold: 150, high_threshold: 50, ..Default::default() };
        assert!(canny(&step_image(), &bad).is_err());
        assert!(bridge(&EdgeMap::empty(4, 4), 2).is_err());
    }

    #[test]
    fn thicken_examples() {
        let single = EdgeMap::from_fn(7, 7, |x, y| x == 3 && y == 3);
        assert_eq!(thicken(&single, 0), single);
        let t = thicken(&single, 1);
        let expected = EdgeMap::from_fn(7, 7, |x, y| (2..=4).contains(&x) && (2..=4).contains(&y));
        assert_eq!(t, expected);
    }

    #[test]
    fn bridge_fills_small_gap() {
        let strip = EdgeMap::from_fn(12, 1, |x, _| x == 5 || x == 7);
        assert_eq!(bridge(&strip, 1).unwrap(), strip);
        let closed = bridge(&strip, 5).unwrap();
        let filled = EdgeMap::from_fn(12, 1, |x, _| (5..=7).contains(&x));
        assert_eq!(closed, filled);

        // near the border the dilated run is clamped and survives erosion
        let edge = EdgeMap::from_fn(8, 1, |x, _| x == 2 || x == 4);
        let closed = bridge(&edge, 5).unwrap();
        assert_eq!(closed, EdgeMap::from_fn(8, 1, |x, _| x <= 4));
    }

    #[test]
    fn control_video_shapes() {
        let frames = vec![GrayImage::filled(32, 24, 90); 4];
        let v = make_control_video(&frames, &CannyParams::default(), &FilterParams::default(), 10.0).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.dimensions(), (32, 24));
        assert!(v.frames.iter().all(|f| f.edge_count() == 0));

        let mixed = vec![GrayImage::new(32, 24), GrayImage::new(24, 32)];
        assert!(matches!(
            make_control_video(&mixed, &CannyParams::default(), &FilterParams::default(), 10.0),
            Err(EdgeError::SizeMismatch { index: 1, .. })
        ));
        assert!(matches!(
            make_control_video(&[], &CannyParams::default(), &FilterParams::default(), 10.0),
            Err(EdgeError::Empty)
        ));
    }

    #[test]
    fn control_video_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v =
            make_control_video(&[step_image(), step_image()], &CannyParams::default(), &FilterParams::default(), 15.0)
                .unwrap();
        let meta = ControlVideoMeta {
            fps: 15.0,
            frames: 2,
            width: 64,
            height: 64,
            canny: CannyParams::default(),
            filter: FilterParams::default(),
        };
        v.write_dir(dir.path(), &meta).unwrap();
        let (back, m) = ControlVideo::read_dir(dir.path()).unwrap();
        assert_eq!(back, v);
        assert_eq!(m, meta);
    }

    fn arb_edge_map() -> impl Strategy<Value = EdgeMap> {
        (4usize..24, 4usize..24, any::<u64>(), 1u32..6).prop_map(|(w, h, seed, density)| {
            let mut s = seed | 1;
            EdgeMap::from_fn(w, h, |_, _| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s % 16) < density as u64
            })
        })
    }

    fn arb_gray() -> impl Strategy<Value = GrayImage> {
        (8usize..40, 8usize..40, prop::collection::vec(any::<u8>(), 40 * 40))
            .prop_map(|(w, h, px)| GrayImage::from_raw(w, h, px[..w * h].to_vec()).unwrap())
    }

    proptest! {
        #[test]
        fn canny_output_is_binary_and_above_low(img in arb_gray()) {
            let p = CannyParams::default();
            let e = canny(&img, &p).unwrap();
            prop_assert!(e.as_gray().data().iter().all(|&v| v == 0 || v == 255));
            let k = gaussian_kernel_q12(p.gaussian_sigma, p.kernel_size);
            let (gx, gy) = sobel(&gaussian_blur(&img, &k));
            for i in 0..gx.len() {
                if e.as_gray().data()[i] != 0 {
                    let m2 = gx[i] as i64 * gx[i] as i64 + gy[i] as i64 * gy[i] as i64;
                    prop_assert!(m2 >= (p.low_threshold as i64).pow(2));
                }
            }
        }

        #[test]
        fn canny_ignores_dc_offset(img in arb_gray(), c in 0u8..64) {
            let limited = GrayImage::from_raw(img.width(), img.height(),
                img.data().iter().map(|v| v / 2).collect()).unwrap();
            let shifted = GrayImage::from_raw(img.width(), img.height(),
                limited.data().iter().map(|v| v + c).collect()).unwrap();
            let p = CannyParams::default();
            prop_assert_eq!(canny(&limited, &p).unwrap(), canny(&shifted, &p).unwrap());
        }

        #[test]
        fn thicken_is_extensive_and_monotone(a in arb_edge_map(), iters in 0usize..3) {
            let b = EdgeMap::from_fn(a.width(), a.height(), |x, y| a.is_edge(x, y) || (x + y) % 5 == 0);
            let ta = thicken(&a, iters);
            prop_assert!(a.is_subset_of(&ta));
            prop_assert!(ta.is_subset_of(&thicken(&b, iters)));
        }

        #[test]
        fn bridge_is_extensive_idempotent_and_merges(a in arb_edge_map(), k in prop::sample::select(vec![1usize, 3, 5, 7])) {
            let once = bridge(&a, k).unwrap();
            prop_assert!(a.is_subset_of(&once));
            prop_assert_eq!(&bridge(&once, k).unwrap(), &once);
            prop_assert!(count_components(&once) <= count_components(&a));
        }
    }
}
