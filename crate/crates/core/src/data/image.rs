use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::numerics::{lit, Scalar, Tensor};

/// RGB image, values in `[0, 1]`, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "image {height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self { height, width, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `[H, W, 3]` constant tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            self.data.iter().map(|v| lit(*v as f64)).collect(),
            &[self.height, self.width, 3],
        )
        .expect("image extents")
    }

    fn to_rgb8(&self) -> RgbImage {
        let bytes = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("image extents")
    }

    fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|b| *b as f32 / 255.0).collect();
        Self::new(img.height() as usize, img.width() as usize, data)
    }
}

/// Binary PPM (P6, 8-bit). Values are quantized to the nearest of 256 levels.
pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    let rgb = image.to_rgb8();
    let mut bytes = Vec::new();
    PnmEncoder::new(&mut bytes)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(rgb.as_raw(), rgb.width(), rgb.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Image::from_rgb8(&img.to_rgb8())
}
