//! Occluder removal: class masks from a parsing map, region deletion, and
//! smoothed total-variation inpainting of the deleted region.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, Mask};

/// Default parsing label for eyeglasses.
pub const DEFAULT_EYEGLASS_CLASS: u8 = 3;
/// Default mask growth in pixels.
pub const DEFAULT_DILATE_PX: usize = 2;
/// Charbonnier smoothing of the TV energy.
pub const TV_EPSILON: f64 = 1e-3;

/// Per-pixel semantic labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsingMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl ParsingMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("parsing map must be non-empty".into()));
        }
        Error::check_len("parsing labels", width * height, labels.len())?;
        Ok(ParsingMap { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Reads a single-channel 8-bit PNG of class ids.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
        let img = reader
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::format(path.display().to_string(), other.to_string()),
            })?;
        if img.color() != image::ColorType::L8 {
            return Err(Error::format(
                path.display().to_string(),
                format!("parsing map must be 8-bit grayscale, got {:?}", img.color()),
            ));
        }
        let img = img.into_luma8();
        ParsingMap::new(img.width() as usize, img.height() as usize, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("label buffer sized at construction");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(path, io),
                other => Error::format(path.display().to_string(), other.to_string()),
            })
    }
}

/// Pixels labelled `class_id`, dilated by a `(2r+1)x(2r+1)` square.
pub fn extract_class_mask(parsing: &ParsingMap, class_id: u8, dilate_px: usize) -> Mask {
    let (w, h) = (parsing.width, parsing.height);
    let base: Vec<bool> = parsing.labels.iter().map(|&l| l == class_id).collect();
    if dilate_px == 0 {
        return Mask::from_vec(w, h, base).expect("sized from map");
    }
    let r = dilate_px;
    // Separable max filter: rows, then columns.
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            rows[y * w + x] = (x0..=x1).any(|xx| base[y * w + xx]);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = (y0..=y1).any(|yy| rows[yy * w + x]);
        }
    }
    Mask::from_vec(w, h, out).expect("sized from map")
}

/// Copy of `img` with masked pixels set to 0.
pub fn delete_region(img: &ImageBuffer, mask: &Mask) -> Result<ImageBuffer> {
    img.masked(&mask.not())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintConfig {
    pub iters: usize,
    /// Relaxation factor in `(0, 1]`; 1 is a full majorize-minimize step.
    pub step: f64,
    /// Stop when the relative energy change falls below this.
    pub tol: f64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig { iters: 500, step: 1.0, tol: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct InpaintResult {
    pub image: ImageBuffer,
    /// Energy before the first sweep, then after every accepted sweep.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Charbonnier-smoothed anisotropic TV energy, normalized by pixel count.
pub fn smoothed_tv_energy(img: &ImageBuffer) -> f64 {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let phi = |a: f64, b: f64| ((a - b).powi(2) + TV_EPSILON * TV_EPSILON).sqrt();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = d[3 * (y * w + x) + c];
                if x + 1 < w {
                    sum += phi(d[3 * (y * w + x + 1) + c], v);
                }
                if y + 1 < h {
                    sum += phi(d[3 * ((y + 1) * w + x) + c], v);
                }
            }
        }
    }
    sum / img.pixel_count() as f64
}

fn neighbors(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let mut n = [None; 4];
    if x > 0 {
        n[0] = Some(y * w + x - 1);
    }
    if x + 1 < w {
        n[1] = Some(y * w + x + 1);
    }
    if y > 0 {
        n[2] = Some((y - 1) * w + x);
    }
    if y + 1 < h {
        n[3] = Some((y + 1) * w + x);
    }
    n.into_iter().flatten()
}

/// Fills the masked pixels by minimizing the smoothed TV energy with the
/// unmasked pixels held fixed.
///
/// Each sweep freezes the Charbonnier weights `1 / phi(d)` and performs one
/// Gauss-Seidel pass of weighted-average updates, i.e. gradient steps
/// preconditioned by the quadratic majorizer's diagonal. Every coordinate
/// update decreases the majorizer, so the energy never increases. Masked
/// pixels start at the mean of the unmasked ring around the mask; with
/// `step <= 1` all values stay inside the ring's range.
pub fn tv_inpaint(corrupted: &ImageBuffer, mask: &Mask, cfg: &InpaintConfig) -> Result<InpaintResult> {
    let (w, h) = (corrupted.width(), corrupted.height());
    mask.check_size(w, h)?;
    if !(cfg.step > 0.0 && cfg.step <= 1.0) {
        return Err(Error::InvalidInput(format!("inpaint step must be in (0, 1], got {}", cfg.step)));
    }
    if !(cfg.tol >= 0.0) {
        return Err(Error::InvalidInput("inpaint tolerance must be nonnegative".into()));
    }
    let m = mask.data();
    let masked: Vec<usize> = (0..w * h).filter(|&i| m[i]).collect();
    if masked.len() == w * h {
        return Err(Error::InvalidInput("mask covers the whole image; nothing to inpaint from".into()));
    }

    let mut img = corrupted.clone();
    if masked.is_empty() {
        let e = smoothed_tv_energy(&img);
        return Ok(InpaintResult { image: img, energies: vec![e], iterations: 0, converged: true });
    }

    let mut ring_sum = [0.0; 3];
    let mut ring_count = 0usize;
    let mut in_ring = vec![false; w * h];
    for &i in &masked {
        for j in neighbors(i % w, i / w, w, h) {
            if !m[j] && !in_ring[j] {
                in_ring[j] = true;
                ring_count += 1;
                let p = img.get(j % w, j / w);
                for c in 0..3 {
                    ring_sum[c] += p[c];
                }
            }
        }
    }
    let fill = ring_sum.map(|s| s / ring_count as f64);
    for &i in &masked {
        img.set(i % w, i / w, fill);
    }

    let eps2 = TV_EPSILON * TV_EPSILON;
    let mut energies = vec![smoothed_tv_energy(&img)];
    let mut converged = false;
    let mut iterations = 0;
    // Inverse Charbonnier weight per directed neighbor pair, frozen per sweep.
    let mut weights = vec![[0.0f64; 4 * 3]; masked.len()];

    while iterations < cfg.iters {
        let d = img.data();
        for (slot, &i) in weights.iter_mut().zip(&masked) {
            for (k, j) in neighbors(i % w, i / w, w, h).enumerate() {
                for c in 0..3 {
                    slot[3 * k + c] = 1.0 / ((d[3 * j + c] - d[3 * i + c]).powi(2) + eps2).sqrt();
                }
            }
        }

        let previous = img.clone();
        let data = img.data_mut();
        for (slot, &i) in weights.iter().zip(&masked) {
            for c in 0..3 {
                let mut num = 0.0;
                let mut den = 0.0;
                for (k, j) in neighbors(i % w, i / w, w, h).enumerate() {
                    let wt = slot[3 * k + c];
                    num += wt * data[3 * j + c];
                    den += wt;
                }
                let target = num / den;
                let v = &mut data[3 * i + c];
                *v += cfg.step * (target - *v);
            }
        }
        iterations += 1;

        let e_old = *energies.last().unwrap();
        let e_new = smoothed_tv_energy(&img);
        if e_new > e_old {
            // Only reachable through rounding at convergence.
            img = previous;
            converged = true;
            break;
        }
        energies.push(e_new);
        if (e_old - e_new) <= cfg.tol * e_old.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok(InpaintResult { image: img, energies, iterations, converged })
}
