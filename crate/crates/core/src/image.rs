//! Float RGB images, boolean masks and their 8-bit PNG encodings.
//!
//! Stored pixel values are linear. PNG files hold gamma-encoded 8-bit values
//! using a plain power law: `linear = (v / 255)^2.2`.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

pub const DISPLAY_GAMMA: f64 = 2.2;

/// Row-major `height x width x 3` float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        ImageBuffer { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len("image data", width * height * 3, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("image contains non-finite values".into()));
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &ImageBuffer) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::InvalidInput(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Zeroes every pixel outside `mask`.
    pub fn masked(&self, mask: &Mask) -> Result<ImageBuffer> {
        mask.check_size(self.width, self.height)?;
        let mut out = self.clone();
        for (px, &keep) in out.data.chunks_exact_mut(3).zip(mask.data()) {
            if !keep {
                px.fill(0.0);
            }
        }
        Ok(out)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = open_image(path)?.to_rgb8();
        let lut = decode_lut();
        let data = img.as_raw().iter().map(|&v| lut[v as usize]).collect();
        Ok(ImageBuffer {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(x as usize, y as usize);
            Rgb(p.map(encode_channel))
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        save_image(self.to_rgb8(), path)
    }
}

fn decode_lut() -> [f64; 256] {
    std::array::from_fn(|v| (v as f64 / 255.0).powf(DISPLAY_GAMMA))
}

/// Linear value to 8-bit display code; clamps to [0, 1] first.
pub fn encode_channel(v: f64) -> u8 {
    let c = v.clamp(0.0, 1.0).powf(1.0 / DISPLAY_GAMMA);
    (c * 255.0).round() as u8
}

pub fn decode_channel(v: u8) -> f64 {
    (v as f64 / 255.0).powf(DISPLAY_GAMMA)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path.display().to_string(), other.to_string()),
    })
}

fn save_image<P, C>(img: image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path.display().to_string(), other.to_string()),
        })
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Mask { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        Error::check_len("mask data", width * height, data.len())?;
        Ok(Mask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn check_size(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::InvalidInput(format!(
                "mask is {}x{}, expected {}x{}",
                self.width, self.height, width, height
            )));
        }
        Ok(())
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        other.check_size(self.width, self.height)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(Mask { data, ..*self })
    }

    pub fn not(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|v| !v).collect(),
            ..*self
        }
    }

    /// Reads a grayscale PNG; any nonzero value is `true`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = open_image(path)?.to_luma8();
        Ok(Mask {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&v| v != 0).collect(),
        })
    }

    /// Writes 0 / 255 grayscale.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        });
        save_image(img, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_codes_survive_transfer_round_trip() {
        for v in 0..=255u8 {
            assert_eq!(encode_channel(decode_channel(v)), v);
        }
        assert_eq!(encode_channel(-0.5), 0);
        assert_eq!(encode_channel(7.0), 255);
    }

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageBuffer::new(5, 3);
        img.set(1, 2, [decode_channel(200), decode_channel(10), 1.0]);
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = ImageBuffer::load_png(&p).unwrap();
        assert_eq!((back.width(), back.height()), (5, 3));
        assert_eq!(back.to_rgb8(), img.to_rgb8());

        let mask = Mask::from_fn(4, 4, |x, y| (x + y) % 3 == 0);
        let mp = dir.path().join("m.png");
        mask.save_png(&mp).unwrap();
        assert_eq!(Mask::load_png(&mp).unwrap(), mask);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(ImageBuffer::load_png("/no/such/file.png"), Err(Error::Io { .. })));
    }

    #[test]
    fn masked_zeroes_outside() {
        let img = ImageBuffer::filled(2, 1, [0.5, 0.5, 0.5]);
        let m = Mask::from_vec(2, 1, vec![true, false]).unwrap();
        let out = img.masked(&m).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5, 0.5, 0.0, 0.0, 0.0]);
    }
}
