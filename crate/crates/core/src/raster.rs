//! 8-bit interleaved rasters and the handful of pixel operations the
//! pipeline needs (crop, paste, resize, PNG I/O).

use std::path::Path;

use thiserror::Error;

use crate::geom::TextBox;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("image i/o failed for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("unsupported channel count {0}")]
    Channels(usize),
}

/// Row-major, channel-interleaved 8-bit raster.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster({}x{}x{})", self.width, self.height, self.channels)
    }
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, &vec![0; channels])
    }

    pub fn filled(width: usize, height: usize, value: &[u8]) -> Self {
        let channels = value.len();
        assert!(channels > 0, "raster needs at least one channel");
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width * height * channels {
            return Err(RasterError::Dims(format!(
                "buffer of {} bytes for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[self.offset(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        let o = self.offset(x, y) + c;
        self.data[o] = v;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Raster, what: &str) -> Result<(), RasterError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(RasterError::Dims(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Copy of the region covered by `b`, which must lie inside the raster.
    pub fn crop(&self, b: &TextBox) -> Result<Raster, RasterError> {
        if !b.fits_in(self.width, self.height) {
            return Err(RasterError::Dims(format!(
                "crop box {b:?} outside {}x{}",
                self.width, self.height
            )));
        }
        let (x0, y0, w, h) = (b.x as usize, b.y as usize, b.w as usize, b.h as usize);
        let mut out = Vec::with_capacity(w * h * self.channels);
        for y in y0..y0 + h {
            let o = self.offset(x0, y);
            out.extend_from_slice(&self.data[o..o + w * self.channels]);
        }
        Raster::from_vec(w, h, self.channels, out)
    }

    /// Writes `patch` with its top-left corner at (`x`, `y`). The patch must fit.
    pub fn paste(&mut self, patch: &Raster, x: usize, y: usize) -> Result<(), RasterError> {
        if patch.channels != self.channels || x + patch.width > self.width || y + patch.height > self.height {
            return Err(RasterError::Dims(format!(
                "paste {:?} at ({x},{y}) into {:?}",
                patch, self
            )));
        }
        for py in 0..patch.height {
            let src = patch.offset(0, py);
            let dst = self.offset(x, y + py);
            let n = patch.width * self.channels;
            self.data[dst..dst + n].copy_from_slice(&patch.data[src..src + n]);
        }
        Ok(())
    }

    /// Bilinear resize with pixel-center alignment. Same-size requests return a copy.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Raster::new(width, height, self.channels);
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f32;
                for c in 0..self.channels {
                    let a = self.get(x0, y0, c) as f32 * (1.0 - tx) + self.get(x1, y0, c) as f32 * tx;
                    let b = self.get(x0, y1, c) as f32 * (1.0 - tx) + self.get(x1, y1, c) as f32 * tx;
                    out.set(x, y, c, (a * (1.0 - ty) + b * ty).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }

    /// Luma with weights 0.299/0.587/0.114, as f64 in [0, 255].
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(self.channels)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect(),
        }
    }

    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .luma()
            .into_iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn to_rgb(&self) -> Raster {
        match self.channels {
            3 => self.clone(),
            1 => {
                let mut data = Vec::with_capacity(self.data.len() * 3);
                for &v in &self.data {
                    data.extend_from_slice(&[v, v, v]);
                }
                Raster {
                    width: self.width,
                    height: self.height,
                    channels: 3,
                    data,
                }
            }
            c => {
                let mut data = Vec::with_capacity(self.width * self.height * 3);
                for p in self.data.chunks_exact(c) {
                    data.extend_from_slice(&p[..3]);
                }
                Raster {
                    width: self.width,
                    height: self.height,
                    channels: 3,
                    data,
                }
            }
        }
    }

    /// Channel values mapped from [0, 255] to [-1, 1].
    pub fn to_signed_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 127.5 - 1.0).collect()
    }

    pub fn from_signed_unit(
        width: usize,
        height: usize,
        channels: usize,
        values: &[f32],
    ) -> Result<Raster, RasterError> {
        let data = values
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8)
            .collect();
        Raster::from_vec(width, height, channels, data)
    }

    pub fn load_png(path: &Path) -> Result<Raster, RasterError> {
        Self::load(path)
    }

    /// Loads any format the `image` crate was built with; gray stays gray,
    /// everything else becomes RGB.
    pub fn load(path: &Path) -> Result<Raster, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Raster {
                    width: w as usize,
                    height: h as usize,
                    channels: 1,
                    data: g.into_raw(),
                }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Raster {
                    width: w as usize,
                    height: h as usize,
                    channels: 3,
                    data: rgb.into_raw(),
                }
            }
        })
    }

    /// PNG bytes in memory.
    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        use image::ImageEncoder;
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => return Err(RasterError::Channels(c)),
        };
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.data, self.width as u32, self.height as u32, color)
            .map_err(|source| RasterError::Io {
                path: "<memory>".into(),
                source,
            })?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => return Err(RasterError::Channels(c)),
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}
