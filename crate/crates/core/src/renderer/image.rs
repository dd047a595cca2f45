use super::RenderError;
use std::io::Cursor;
use std::path::Path;

/// Linear RGB image, row-major, three channels per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Largest per-channel absolute difference; `None` if sizes differ.
    pub fn max_abs_diff(&self, other: &Image) -> Option<f64> {
        self.same_size(other).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }

    /// Number of pixels that differ from `rgb` by more than `tol` in any channel.
    pub fn count_different(&self, rgb: [f64; 3], tol: f64) -> usize {
        self.data
            .chunks_exact(3)
            .filter(|p| p.iter().zip(&rgb).any(|(a, b)| (a - b).abs() > tol))
            .count()
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| linear_to_srgb8(v)).collect()
    }

    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width as usize * height as usize * 3);
        Image {
            width,
            height,
            data: bytes.iter().map(|&b| srgb8_to_linear(b)).collect(),
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.to_rgb8())
            .expect("buffer matches dimensions");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .expect("png encoding into memory");
        out.into_inner()
    }

    /// Decode any 8-bit PNG (alpha and gray are converted to RGB).
    pub fn from_png(bytes: &[u8]) -> Result<Self, RenderError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| RenderError::Png(e.to_string()))?
            .to_rgb8();
        Ok(Image::from_rgb8(img.width(), img.height(), img.as_raw()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        std::fs::write(path.as_ref(), self.to_png()).map_err(|source| RenderError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let bytes = std::fs::read(path.as_ref()).map_err(|source| RenderError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })?;
        Self::from_png(&bytes).map_err(|e| match e {
            RenderError::Png(m) => RenderError::Png(format!("{}: {m}", path.as_ref().display())),
            other => other,
        })
    }
}

pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb8(v: f64) -> u8 {
    (linear_to_srgb(v) * 255.0).round() as u8
}

pub fn srgb8_to_linear(b: u8) -> f64 {
    srgb_to_linear(b as f64 / 255.0)
}
