//! Loss functions for synthesis and reconstruction, with analytic gradients
//! for the terms that drive optimization.
//!
//! Nonsmooth points (|0| in L1 and TV, a zero L2 residual) use the zero
//! subgradient.

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;
use crate::image::{ImageBuffer, Mask};

/// Weights of the synthesis total (`pixe`, `style`, `var`) and of the
/// reconstruction total (`lambda_1` on the pixel term, `lambda_2` on the
/// feature term).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_pixe: f64,
    pub lambda_style: f64,
    pub lambda_var: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_pixe: 1.0,
            lambda_style: 250.0,
            lambda_var: 0.1,
            lambda_1: 1.4,
            lambda_2: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_pixe,
            self.lambda_style,
            self.lambda_var,
            self.lambda_1,
            self.lambda_2,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Squared L2 distance between stacked landmark coordinates.
pub fn landmark_loss(pred: &LandmarkSet, gt: &LandmarkSet) -> f64 {
    pred.points()
        .iter()
        .zip(gt.points())
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum()
}

/// The normalizer of [`pixel_l1`]: the inpainting-mask pixel count when a
/// mask is given, the image pixel count otherwise.
pub fn mask_size(img: &ImageBuffer, mask: Option<&Mask>) -> usize {
    mask.map_or(img.pixel_count(), Mask::count)
}

fn check_mask_size(s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidInput("mask size must be at least 1".into()));
    }
    Ok(())
}

/// `(1/S) * sum |out - reference|` over every pixel and channel.
pub fn pixel_l1(out: &ImageBuffer, reference: &ImageBuffer, mask_size: usize) -> Result<f64> {
    out.same_size(reference)?;
    check_mask_size(mask_size)?;
    let sum: f64 = out
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / mask_size as f64)
}

/// Gradient of [`pixel_l1`] with respect to `out`.
pub fn pixel_l1_grad(out: &ImageBuffer, reference: &ImageBuffer, mask_size: usize) -> Result<Vec<f64>> {
    out.same_size(reference)?;
    check_mask_size(mask_size)?;
    let s = mask_size as f64;
    Ok(out
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| sign0(a - b) / s)
        .collect())
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One level of feature maps, stored channel-major: `data[c][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureLevel {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len("feature level", channels * height * width, data.len())?;
        Ok(FeatureLevel { channels, height, width, data })
    }

    fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMaps {
    pub levels: Vec<FeatureLevel>,
}

/// Produces the multi-level feature maps compared by [`style_loss`].
pub trait StyleExtractor {
    fn extract(&self, img: &ImageBuffer) -> FeatureMaps;
}

/// Fixed pyramid: raw RGB, 2x2 average-pooled RGB, and forward-difference
/// horizontal and vertical gradients of each channel (6 maps, replicate
/// boundary).
#[derive(Debug, Clone, Copy, Default)]
pub struct PyramidExtractor;

impl StyleExtractor for PyramidExtractor {
    fn extract(&self, img: &ImageBuffer) -> FeatureMaps {
        let (w, h) = (img.width(), img.height());
        let px = img.data();

        let mut raw = vec![0.0; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    raw[c * w * h + y * w + x] = px[3 * (y * w + x) + c];
                }
            }
        }

        let (pw, ph) = (w / 2, h / 2);
        let mut pooled = vec![0.0; 3 * pw * ph];
        for c in 0..3 {
            for y in 0..ph {
                for x in 0..pw {
                    let at = |xx: usize, yy: usize| raw[c * w * h + yy * w + xx];
                    pooled[c * pw * ph + y * pw + x] = 0.25
                        * (at(2 * x, 2 * y)
                            + at(2 * x + 1, 2 * y)
                            + at(2 * x, 2 * y + 1)
                            + at(2 * x + 1, 2 * y + 1));
                }
            }
        }

        let mut grads = vec![0.0; 6 * w * h];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = raw[c * w * h + y * w + x];
                    if x + 1 < w {
                        grads[c * w * h + y * w + x] = raw[c * w * h + y * w + x + 1] - v;
                    }
                    if y + 1 < h {
                        grads[(3 + c) * w * h + y * w + x] = raw[c * w * h + (y + 1) * w + x] - v;
                    }
                }
            }
        }

        FeatureMaps {
            levels: vec![
                FeatureLevel { channels: 3, height: h, width: w, data: raw },
                FeatureLevel { channels: 3, height: ph, width: pw, data: pooled },
                FeatureLevel { channels: 6, height: h, width: w, data: grads },
            ],
        }
    }
}

/// `F^T F` for the `(H*W) x O` flattening of the level, row-major `O x O`.
pub fn gram_matrix(level: &FeatureLevel) -> Vec<f64> {
    let o = level.channels;
    let mut g = vec![0.0; o * o];
    for a in 0..o {
        for b in a..o {
            let v: f64 = level
                .channel(a)
                .iter()
                .zip(level.channel(b))
                .map(|(x, y)| x * y)
                .sum();
            g[a * o + b] = v;
            g[b * o + a] = v;
        }
    }
    g
}

/// Gram-matrix style distance between `a` and `b`, both restricted to `mask`
/// before feature extraction:
/// `sum_n (1/O_n^2) * || (G_n(a.m) - G_n(b.m)) / (O_n H_n W_n) ||_1`.
pub fn style_loss(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: &Mask,
    extractor: &dyn StyleExtractor,
) -> Result<f64> {
    a.same_size(b)?;
    let fa = extractor.extract(&a.masked(mask)?);
    let fb = extractor.extract(&b.masked(mask)?);
    Error::check_len("feature levels", fa.levels.len(), fb.levels.len())?;
    let mut total = 0.0;
    for (la, lb) in fa.levels.iter().zip(&fb.levels) {
        let o = la.channels as f64;
        let size = o * (la.height * la.width) as f64;
        if size == 0.0 {
            continue;
        }
        let ga = gram_matrix(la);
        let gb = gram_matrix(lb);
        let l1: f64 = ga.iter().zip(&gb).map(|(x, y)| ((x - y) / size).abs()).sum();
        total += l1 / (o * o);
    }
    Ok(total)
}

/// `(1/P) * sum(|dh| + |dv|)` with forward differences and replicate
/// boundary; `P` is the pixel count.
pub fn tv_loss(img: &ImageBuffer) -> f64 {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = d[3 * (y * w + x) + c];
                if x + 1 < w {
                    sum += (d[3 * (y * w + x + 1) + c] - v).abs();
                }
                if y + 1 < h {
                    sum += (d[3 * ((y + 1) * w + x) + c] - v).abs();
                }
            }
        }
    }
    sum / img.pixel_count() as f64
}

pub fn tv_loss_grad(img: &ImageBuffer) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let d = img.data();
    let p = img.pixel_count() as f64;
    let mut g = vec![0.0; d.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let i = 3 * (y * w + x) + c;
                if x + 1 < w {
                    let j = 3 * (y * w + x + 1) + c;
                    let s = sign0(d[j] - d[i]) / p;
                    g[j] += s;
                    g[i] -= s;
                }
                if y + 1 < h {
                    let j = 3 * ((y + 1) * w + x) + c;
                    let s = sign0(d[j] - d[i]) / p;
                    g[j] += s;
                    g[i] -= s;
                }
            }
        }
    }
    g
}

pub fn fsm_total(pixe: f64, style: f64, var: f64, w: &LossWeights) -> f64 {
    w.lambda_pixe * pixe + w.lambda_style * style + w.lambda_var * var
}

pub fn l3d_total(l1: f64, l2: f64, w: &LossWeights) -> f64 {
    w.lambda_1 * l1 + w.lambda_2 * l2
}

/// A masked loss value; `empty_mask` is set when no pixel was eligible and
/// the value was defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    pub empty_mask: bool,
}

/// `sqrt(mean over valid pixels of sum_c (out - rendered)^2)`.
pub fn pixel_l2(out: &ImageBuffer, rendered: &ImageBuffer, valid: &Mask) -> Result<MaskedLoss> {
    out.same_size(rendered)?;
    valid.check_size(out.width(), out.height())?;
    let count = valid.count();
    if count == 0 {
        log::warn!("pixel_l2: empty valid mask, loss defined as 0");
        return Ok(MaskedLoss { value: 0.0, empty_mask: true });
    }
    let mut sum = 0.0;
    for ((a, b), &v) in out
        .data()
        .chunks_exact(3)
        .zip(rendered.data().chunks_exact(3))
        .zip(valid.data())
    {
        if v {
            sum += (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>();
        }
    }
    Ok(MaskedLoss { value: (sum / count as f64).sqrt(), empty_mask: false })
}

/// Gradient of [`pixel_l2`] with respect to `rendered`.
pub fn pixel_l2_grad(out: &ImageBuffer, rendered: &ImageBuffer, valid: &Mask) -> Result<Vec<f64>> {
    let loss = pixel_l2(out, rendered, valid)?;
    let mut g = vec![0.0; rendered.data().len()];
    if loss.empty_mask || loss.value == 0.0 {
        return Ok(g);
    }
    let scale = 1.0 / (valid.count() as f64 * loss.value);
    for (i, &v) in valid.data().iter().enumerate() {
        if v {
            for k in 0..3 {
                let j = 3 * i + k;
                g[j] = -(out.data()[j] - rendered.data()[j]) * scale;
            }
        }
    }
    Ok(g)
}

/// Maps an image to a feature vector compared by [`feature_cosine_loss`].
///
/// `pullback` returns the image-space gradient (one value per pixel and
/// channel) for a gradient with respect to the embedding, evaluated at `img`.
pub trait Embedder: Sync {
    fn embed(&self, img: &ImageBuffer) -> Vec<f64>;
    fn pullback(&self, img: &ImageBuffer, grad: &[f64]) -> Vec<f64>;
}

/// Linear embedder: grayscale `(r + g + b) / 3`, box-downsampled to a
/// `size x size` grid and flattened. Grid cells that receive no pixel stay 0.
#[derive(Debug, Clone, Copy)]
pub struct DownsampleEmbedder {
    pub size: usize,
}

impl Default for DownsampleEmbedder {
    fn default() -> Self {
        DownsampleEmbedder { size: 32 }
    }
}

impl DownsampleEmbedder {
    fn cell(&self, x: usize, y: usize, w: usize, h: usize) -> usize {
        (y * self.size / h) * self.size + x * self.size / w
    }

    fn counts(&self, w: usize, h: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.size * self.size];
        for y in 0..h {
            for x in 0..w {
                counts[self.cell(x, y, w, h)] += 1;
            }
        }
        counts
    }
}

impl Embedder for DownsampleEmbedder {
    fn embed(&self, img: &ImageBuffer) -> Vec<f64> {
        let (w, h) = (img.width(), img.height());
        let counts = self.counts(w, h);
        let mut out = vec![0.0; self.size * self.size];
        for y in 0..h {
            for x in 0..w {
                let p = img.get(x, y);
                out[self.cell(x, y, w, h)] += p[0] + p[1] + p[2];
            }
        }
        for (o, &n) in out.iter_mut().zip(&counts) {
            if n > 0 {
                *o /= 3.0 * n as f64;
            }
        }
        out
    }

    fn pullback(&self, img: &ImageBuffer, grad: &[f64]) -> Vec<f64> {
        let (w, h) = (img.width(), img.height());
        let counts = self.counts(w, h);
        let mut out = vec![0.0; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                let c = self.cell(x, y, w, h);
                let v = grad[c] / (3.0 * counts[c] as f64);
                out[3 * (y * w + x)..3 * (y * w + x) + 3].fill(v);
            }
        }
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 - <u, v> / (|u| |v|)`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    Error::check_len("embedding", u.len(), v.len())?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidInput(format!(
            "zero-norm embedding (|u| = {nu}, |v| = {nv})"
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    // sqrt(s * s) == s in binary floating point, so u == v gives exactly 0.
    let su: f64 = u.iter().map(|x| x * x).sum();
    let sv: f64 = v.iter().map(|x| x * x).sum();
    Ok(1.0 - dot / (su * sv).sqrt())
}

/// Gradient of [`cosine_distance`] with respect to `v`.
pub fn cosine_distance_grad(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    cosine_distance(u, v)?;
    let (nu, nv) = (norm(u), norm(v));
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| -(a / (nu * nv) - dot * b / (nu * nv * nv * nv)))
        .collect())
}

pub fn feature_cosine_loss(a: &ImageBuffer, b: &ImageBuffer, embedder: &dyn Embedder) -> Result<f64> {
    a.same_size(b)?;
    cosine_distance(&embedder.embed(a), &embedder.embed(b))
}

/// Gradient of [`feature_cosine_loss`] with respect to `b`.
pub fn feature_cosine_grad(a: &ImageBuffer, b: &ImageBuffer, embedder: &dyn Embedder) -> Result<Vec<f64>> {
    a.same_size(b)?;
    let g = cosine_distance_grad(&embedder.embed(a), &embedder.embed(b))?;
    Ok(embedder.pullback(b, &g))
}
