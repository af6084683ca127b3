//! Normalized image tensors and their 8-bit view.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Dataset,
    Generated,
    ExpandedCover,
    Stego,
}

/// An image with values in `[-1, 1]`, stored channel-major (`C x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
    provenance: Provenance,
}

/// Quantized 8-bit view of an [`ImageBuffer`], same layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<u8>,
}

impl ImageBuffer {
    /// Values outside `[-1, 1]` are clamped; non-finite values are rejected.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if values.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{} values for a {width}x{height}x{channels} image",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        let values = values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(ImageBuffer {
            width,
            height,
            channels,
            values,
            provenance,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        ImageBuffer::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
            Provenance::Generated,
        )
        .expect("positive dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Index into `values` of pixel `pixel` (raster index) in `channel`.
    pub fn index(&self, channel: usize, pixel: usize) -> usize {
        channel * self.pixels() + pixel
    }

    pub fn get(&self, channel: usize, pixel: usize) -> f64 {
        self.values[self.index(channel, pixel)]
    }

    pub(crate) fn set(&mut self, channel: usize, pixel: usize, v: f64) {
        let i = self.index(channel, pixel);
        self.values[i] = v.clamp(-1.0, 1.0);
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn quantize(&self) -> QuantizedImage {
        QuantizedImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            values: self.values.iter().map(|&v| quantize_value(v)).collect(),
        }
    }

    /// Snap every value onto the 8-bit grid.
    pub fn snapped(&self) -> ImageBuffer {
        dequantize(&self.quantize(), self.provenance)
    }

    /// 8-bit luma plane, used by grayscale steganalysis features.
    pub fn to_gray8(&self) -> Vec<u8> {
        let q = self.quantize();
        q.to_gray8()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.quantize().save_png(path)
    }

    pub fn load_png(path: &Path, provenance: Provenance) -> Result<ImageBuffer> {
        Ok(dequantize(&QuantizedImage::load_png(path)?, provenance))
    }
}

impl QuantizedImage {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        let n = self.pixels();
        match self.channels {
            1 => self.values.clone(),
            3 => (0..n)
                .map(|i| {
                    let (r, g, b) = (
                        self.values[i] as f64,
                        self.values[n + i] as f64,
                        self.values[2 * n + i] as f64,
                    );
                    (0.299 * r + 0.587 * g + 0.114 * b)
                        .round()
                        .clamp(0.0, 255.0) as u8
                })
                .collect(),
            _ => self.values[..n].to_vec(),
        }
    }

    /// Writes an 8-bit PNG. Any other extension is refused: stego output must
    /// be lossless.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            return Err(Error::LossyFormat(path.to_path_buf()));
        }
        let n = self.pixels();
        let (w, h) = (self.width as u32, self.height as u32);
        let result = match self.channels {
            1 => image::GrayImage::from_raw(w, h, self.values.clone())
                .expect("buffer size")
                .save_with_format(path, image::ImageFormat::Png),
            3 => {
                let mut interleaved = Vec::with_capacity(3 * n);
                for i in 0..n {
                    interleaved.extend([
                        self.values[i],
                        self.values[n + i],
                        self.values[2 * n + i],
                    ]);
                }
                image::RgbImage::from_raw(w, h, interleaved)
                    .expect("buffer size")
                    .save_with_format(path, image::ImageFormat::Png)
            }
            c => {
                return Err(Error::invalid(format!(
                    "cannot write a {c}-channel image as PNG"
                )))
            }
        };
        result.map_err(|e| map_image_error(path, e))
    }

    pub fn load_png(path: &Path) -> Result<QuantizedImage> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| map_image_error(path, e))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let n = w * h;
        let (channels, values) = match img {
            image::DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
            other => {
                let rgb = other.to_rgb8().into_raw();
                let mut planar = vec![0u8; 3 * n];
                for i in 0..n {
                    for c in 0..3 {
                        planar[c * n + i] = rgb[3 * i + c];
                    }
                }
                (3, planar)
            }
        };
        Ok(QuantizedImage {
            width: w,
            height: h,
            channels,
            values,
        })
    }
}

fn map_image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// `round((x + 1) * 127.5)` clamped to `0..=255`.
pub fn quantize_value(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize_value(q: u8) -> f64 {
    q as f64 / 127.5 - 1.0
}

pub fn quantize(img: &ImageBuffer) -> QuantizedImage {
    img.quantize()
}

pub fn dequantize(q: &QuantizedImage, provenance: Provenance) -> ImageBuffer {
    ImageBuffer {
        width: q.width,
        height: q.height,
        channels: q.channels,
        values: q.values.iter().map(|&v| dequantize_value(v)).collect(),
        provenance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(quantize_value(-1.0), 0);
        assert_eq!(quantize_value(1.0), 255);
        assert_eq!(quantize_value(-7.0), 0);
        assert_eq!(quantize_value(3.0), 255);
    }

    #[test]
    fn value_128_round_trips() {
        let x = dequantize_value(128);
        assert!((x - (128.0 / 127.5 - 1.0)).abs() < 1e-15);
        assert!((x - 0.003_921_568_627_450_98).abs() < 1e-12);
        assert_eq!(quantize_value(x), 128);
    }

    #[test]
    fn quantize_dequantize_sweep() {
        for q in 0..=255u8 {
            assert_eq!(quantize_value(dequantize_value(q)), q);
        }
    }

    #[test]
    fn construction_clamps_and_rejects_nan() {
        let img = ImageBuffer::new(1, 1, 1, vec![2.0], Provenance::Dataset).unwrap();
        assert_eq!(img.values(), &[1.0]);
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN], Provenance::Dataset).is_err());
        assert!(ImageBuffer::new(2, 1, 1, vec![0.0], Provenance::Dataset).is_err());
    }

    #[test]
    fn png_round_trip_gray_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let values: Vec<f64> = (0..4 * 3 * channels)
                .map(|i| dequantize_value((i * 37 % 256) as u8))
                .collect();
            let img = ImageBuffer::new(4, 3, channels, values, Provenance::Stego).unwrap();
            let path = dir.path().join(format!("x{channels}.png"));
            img.save_png(&path).unwrap();
            let back = ImageBuffer::load_png(&path, Provenance::Stego).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn lossy_extension_refused() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::filled(2, 2, 1, 0.0);
        let err = img.save_png(&dir.path().join("x.jpg")).unwrap_err();
        assert!(matches!(err, Error::LossyFormat(_)));
    }

    #[test]
    fn luma_weights() {
        let q = QuantizedImage {
            width: 1,
            height: 1,
            channels: 3,
            values: vec![100, 200, 50],
        };
        let expected = (0.299f64 * 100.0 + 0.587 * 200.0 + 0.114 * 50.0).round() as u8;
        assert_eq!(q.to_gray8(), vec![expected]);
    }
}
